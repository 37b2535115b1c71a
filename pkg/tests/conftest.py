import numpy as np
import pytest

from graphtt.tensor import TensorTrain


def random_tt(rng, shape, ranks) -> TensorTrain:
    return TensorTrain([rng.standard_normal((ranks[d], ranks[d + 1], n))
                        for d, n in enumerate(shape)])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list = []


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: full-scale acceptance experiments (slow)")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
