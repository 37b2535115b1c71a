import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphtt.tensor import (
    TensorTrain, balance_cores, capped_ranks, left_orthogonalize, left_subchain, matricize,
    right_subchain, subchains, symmetric_gauge, tensorize, tt_entry, tt_param_count,
    tt_reconstruct, tt_svd, unfold_core,
)

from conftest import random_tt


def reference_column(shape, d, index):
    """Column of the mode-d unfolding by explicit enumeration, lowest mode fastest."""
    rest = [k for k in range(len(shape)) if k != d]
    col, stride = 0, 1
    for k in rest:
        col += index[k] * stride
        stride *= shape[k]
    return col


def test_matricize_identity_matrix():
    np.testing.assert_array_equal(matricize(np.eye(2), 0), np.eye(2))


def test_matricize_index_map_by_enumeration(rng):
    shape = (2, 3, 4)
    t = rng.standard_normal(shape)
    m = matricize(t, 1)
    seen = set()
    for idx in itertools.product(*map(range, shape)):
        col = reference_column(shape, 1, idx)
        assert m[idx[1], col] == t[idx]
        seen.add((idx[1], col))
    assert len(seen) == t.size
    # 1-based (2,1,4) -> row 1, column 8
    assert reference_column(shape, 1, (1, 0, 3)) + 1 == 8


@pytest.mark.parametrize("shape,d", [((2, 3, 4), 0), ((3, 2, 4), 2), ((5, 4, 3, 2), 1)])
def test_tensorize_round_trip(rng, shape, d):
    t = rng.standard_normal(shape)
    np.testing.assert_array_equal(tensorize(matricize(t, d), d, shape), t)


def test_tensorize_rejects_bad_columns():
    with pytest.raises(ValueError):
        tensorize(np.zeros((2, 3)), 0, (2, 2))
    with pytest.raises(ValueError):
        matricize(np.zeros((2, 2)), 2)


def test_bijection_exhaustive_all_modes(rng):
    shape = (5, 4, 3, 2)
    t = np.arange(np.prod(shape), dtype=float).reshape(shape)
    for d in range(4):
        m = matricize(t, d)
        assert np.unique(m).size == t.size
        for idx in itertools.product(*map(range, shape)):
            assert m[idx[d], reference_column(shape, d, idx)] == t[idx]


def test_tt_entry_all_ones():
    tt = TensorTrain([np.ones((1, 1, 3))] * 3)
    assert all(tt_entry(tt, idx) == 1.0 for idx in itertools.product(range(3), repeat=3))


def test_tt_entry_rank_two_outer_sum(rng):
    a = rng.standard_normal((2, 4))
    b = rng.standard_normal((2, 5))
    tt = TensorTrain([a.reshape(1, 2, 4), b.reshape(2, 1, 5)])
    ref = np.einsum("ri,rj->ij", a, b)
    for i, j in itertools.product(range(4), range(5)):
        assert tt_entry(tt, (i, j)) == pytest.approx(ref[i, j], abs=1e-14)


def test_tt_entry_out_of_range(rng):
    tt = random_tt(rng, (2, 2), (1, 2, 1))
    with pytest.raises(IndexError):
        tt_entry(tt, (2, 0))


def test_scaling_gauge(rng):
    tt = random_tt(rng, (3, 4), (1, 2, 1))
    scaled = TensorTrain([tt.cores[0] * 3.5, tt.cores[1] / 3.5])
    np.testing.assert_allclose(tt_reconstruct(scaled), tt_reconstruct(tt), atol=1e-13)


def test_rank_one_outer_product(rng):
    u, v, w = rng.standard_normal(3), rng.standard_normal(4), rng.standard_normal(2)
    tt = TensorTrain([x.reshape(1, 1, -1) for x in (u, v, w)])
    np.testing.assert_allclose(tt_reconstruct(tt), np.einsum("i,j,k->ijk", u, v, w), atol=1e-14)


def test_reconstruct_matches_entries(rng):
    tt = random_tt(rng, (4, 3, 5), (1, 2, 3, 1))
    X = tt_reconstruct(tt)
    for idx in itertools.product(range(4), range(3), range(5)):
        assert X[idx] == pytest.approx(tt_entry(tt, idx), abs=1e-12)


def property_one_gap(tt, d):
    left, right = subchains(tt, d)
    X = tt_reconstruct(tt)
    return np.abs(matricize(X, d) - unfold_core(tt.cores[d]) @ np.kron(right, left.T)).max()


def test_subchain_boundaries(rng):
    tt = random_tt(rng, (3, 4, 2), (1, 2, 2, 1))
    left, _ = subchains(tt, 0)
    _, right = subchains(tt, 2)
    np.testing.assert_array_equal(left, np.eye(1))
    np.testing.assert_array_equal(right, np.eye(1))
    assert property_one_gap(tt, 1) < 1e-12
    tt2 = random_tt(rng, (3, 4), (1, 2, 1))
    np.testing.assert_array_equal(subchains(tt2, 1)[1], np.eye(1))


def test_subchain_shapes(rng):
    tt = random_tt(rng, (3, 4, 2, 5), (1, 2, 3, 2, 1))
    assert left_subchain(tt, 2).shape == (12, 3)
    assert right_subchain(tt, 1).shape == (3, 10)


def test_property_one_random_trains():
    rng = np.random.default_rng(7)
    for _ in range(100):
        D = int(rng.integers(2, 5))
        shape = rng.integers(1, 6, size=D)
        ranks = [1] + list(rng.integers(1, 4, size=D - 1)) + [1]
        tt = random_tt(rng, shape, ranks)
        for d in range(D):
            assert property_one_gap(tt, d) < 1e-10


def test_gauge_invariance(rng):
    tt = random_tt(rng, (4, 5, 3), (1, 3, 3, 1))
    M = rng.standard_normal((3, 3)) + 3 * np.eye(3)
    Minv = np.linalg.inv(M)
    c0 = np.einsum("abj,bc->acj", tt.cores[0], M)
    c1 = np.einsum("ab,bcj->acj", Minv, tt.cores[1])
    moved = TensorTrain([c0, c1, tt.cores[2]])
    np.testing.assert_allclose(tt_reconstruct(moved), tt_reconstruct(tt), atol=1e-8)


def test_tt_svd_exact_for_tt_input(rng):
    tt = random_tt(rng, (5, 6, 4), (1, 2, 2, 1))
    X = tt_reconstruct(tt)
    approx = tt_reconstruct(tt_svd(X, [1, 4, 4, 1]))
    assert np.linalg.norm(approx - X) / np.linalg.norm(X) < 1e-10


def test_tt_svd_rank_one_and_zero(rng):
    X = np.einsum("i,j,k->ijk", *(rng.standard_normal(n) for n in (3, 4, 5)))
    np.testing.assert_allclose(tt_reconstruct(tt_svd(X, [1, 1, 1, 1])), X, atol=1e-12)
    zero = tt_svd(np.zeros((3, 4, 2)), [1, 2, 2, 1])
    assert all(not np.any(c) for c in zero.cores)


def test_tt_svd_full_rank_reproduces(rng):
    X = rng.standard_normal((4, 3, 5, 2))
    tt = tt_svd(X, [1, 100, 100, 100, 1])
    assert np.linalg.norm(tt_reconstruct(tt) - X) / np.linalg.norm(X) < 1e-10


def test_tt_svd_rejects_bad_ranks(rng):
    with pytest.raises(ValueError):
        tt_svd(rng.standard_normal((2, 2)), [1, 0, 1])
    with pytest.raises(ValueError):
        tt_svd(rng.standard_normal((2, 2)), [1, -2, 1])


def test_balance_cores_keeps_tensor(rng):
    tt = random_tt(rng, (3, 4, 5), (1, 2, 2, 1))
    tt.cores[0] *= 100
    bal = balance_cores(tt)
    norms = [np.linalg.norm(c) for c in bal.cores]
    assert max(norms) / min(norms) == pytest.approx(1.0)
    np.testing.assert_allclose(tt_reconstruct(bal), tt_reconstruct(tt), rtol=1e-10, atol=1e-10)


def test_param_count_table_values():
    assert tt_param_count([256, 256, 3, 32], [1, 16, 16, 16, 1]) == 70912
    assert tt_param_count([4, 5, 6], [1, 1, 1, 1]) == 15
    with pytest.raises(ValueError):
        tt_param_count([4, 5], [1, 1])


def test_capped_ranks_boundaries():
    assert capped_ranks([4, 4, 4], 16) == [1, 4, 4, 1]
    assert capped_ranks([256, 256, 3, 32], 16) == [1, 16, 16, 16, 1]


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(1, 4), min_size=2, max_size=4), st.integers(0, 2**31 - 1))
def test_matricize_round_trip_property(shape, seed):
    t = np.random.default_rng(seed).standard_normal(shape)
    for d in range(len(shape)):
        np.testing.assert_array_equal(tensorize(matricize(t, d), d, shape), t)


def test_left_orthogonalize(rng):
    tt = random_tt(rng, (4, 3, 5, 2), (1, 3, 4, 2, 1))
    out = left_orthogonalize(tt)
    np.testing.assert_allclose(tt_reconstruct(out), tt_reconstruct(tt), atol=1e-12)
    for core in out.cores[:-1]:
        R0, R1, J = core.shape
        mat = core.transpose(0, 2, 1).reshape(R0 * J, R1)
        np.testing.assert_allclose(mat.T @ mat, np.eye(R1), atol=1e-12)


def test_symmetric_gauge_balances_every_boundary(rng):
    tt = random_tt(rng, (5, 4, 6, 3), (1, 3, 4, 3, 1))
    out = symmetric_gauge(tt)
    X = tt_reconstruct(tt)
    np.testing.assert_allclose(tt_reconstruct(out), X, atol=1e-12 * np.abs(X).max())
    for b in range(1, 4):
        left = left_subchain(out, b)
        right = right_subchain(out, b - 1)
        unfolded = X.reshape(int(np.prod(X.shape[:b])), -1, order="F")
        s = np.linalg.svd(unfolded, compute_uv=False)[:left.shape[1]]
        np.testing.assert_allclose(left.T @ left, np.diag(s), atol=1e-10 * s[0])
        np.testing.assert_allclose(right @ right.T, np.diag(s), atol=1e-10 * s[0])
