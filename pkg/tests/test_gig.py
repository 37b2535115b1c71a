import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphtt.gig import gig_moments, log_bessel_k


def k_half(x):
    return math.sqrt(math.pi / (2 * x)) * math.exp(-x)


def quad_log_bessel_k(order, x):
    """log K via the integral of exp(-x cosh t) cosh(order t) over t >= 0."""
    with mpmath.workdps(40):
        f = lambda t: mpmath.exp(-x * mpmath.cosh(t)) * mpmath.cosh(order * t)
        # the integrand is below exp(-3000) past t = 8 for the orders used here
        return float(mpmath.log(mpmath.quad(f, [0, 1, 2, 4, 8])))


def quad_gig_moments(a, b, lam):
    """E[z], E[1/z] of the GIG density by quadrature in u = log z."""
    with mpmath.workdps(40):
        a, b, lam = mpmath.mpf(a), mpmath.mpf(b), mpmath.mpf(lam)
        # mode of the integrand in u, and its curvature for a sensible grid
        u0 = mpmath.log(((lam - 1) + mpmath.sqrt((lam - 1) ** 2 + a * b)) / a)
        logf = lambda u, s: (lam + s) * u - (a * mpmath.exp(u) + b * mpmath.exp(-u)) / 2
        peak = logf(u0, 0)
        curv = (a * mpmath.exp(u0) + b * mpmath.exp(-u0)) / 2
        w = 1 / mpmath.sqrt(curv)
        pts = [u0 + k * w for k in (-60, -20, -8, -3, 0, 3, 8, 20, 60)]

        def integral(s):
            return mpmath.quad(lambda u: mpmath.exp(logf(u, s) - peak), pts)

        z0 = integral(0)
        return float(integral(1) / z0), float(integral(-1) / z0)


def test_half_integer_closed_forms():
    assert log_bessel_k(0.5, 1.0) == pytest.approx(0.5 * math.log(math.pi / 2) - 1, abs=1e-12)
    for x in (0.05, 1.0, 7.0, 40.0):
        base = math.log(k_half(x))
        assert log_bessel_k(0.5, x) == pytest.approx(base, abs=1e-12)
        assert log_bessel_k(1.5, x) == pytest.approx(base + math.log1p(1 / x), abs=1e-12)
        assert log_bessel_k(2.5, x) == pytest.approx(base + math.log(1 + 3 / x + 3 / x ** 2), abs=1e-12)


@pytest.mark.parametrize("x", [0.1, 1.0, 10.0])
def test_order_symmetry(x):
    assert log_bessel_k(-3, x) == log_bessel_k(3, x)


def test_against_integral_representation():
    ref = quad_log_bessel_k(7.3, 2.5)
    assert log_bessel_k(7.3, 2.5) == pytest.approx(ref, rel=1e-10)


@pytest.mark.parametrize("order,x", [(1e5, 1.0), (1e5, 1e8), (60.5, 1e-8), (0.0, 1e-8), (3.0, 1e8)])
def test_extreme_arguments_recurrence(order, x):
    # K_{v+1} = K_{v-1} + (2 v / x) K_v, checked in log space
    lo, mid, hi = (log_bessel_k(order + s, x) for s in (-1, 0, 1))
    assert all(map(math.isfinite, (lo, mid, hi)))
    rhs = np.logaddexp(lo, mid + math.log(2 * order / x)) if order > 0 else lo
    assert hi == pytest.approx(rhs, rel=1e-9, abs=1e-9)


def test_rejects_nonpositive_argument():
    with pytest.raises(ValueError):
        log_bessel_k(1.0, 0.0)
    with pytest.raises(ValueError):
        gig_moments(0.0, 1.0, 0.5)


def test_gig_half_integer_example():
    ez, einv = gig_moments(1.0, 1.0, 0.5)
    assert ez == pytest.approx(2.0, rel=1e-14)
    # E[1/z] = K_{-1/2}/K_{1/2} = 1
    assert einv == pytest.approx(1.0, rel=1e-14)


def test_inverse_moment_recurrence():
    rng = np.random.default_rng(0)
    for _ in range(100):
        a, b = 10 ** rng.uniform(-3, 3, size=2)
        lam = rng.uniform(-50, 5)
        ez, einv = gig_moments(a, b, lam)
        w = math.sqrt(a * b)
        ratio = math.exp(log_bessel_k(lam + 1, w) - log_bessel_k(lam, w))
        assert einv == pytest.approx(math.sqrt(a / b) * ratio - 2 * lam / b, rel=1e-6)


@settings(max_examples=200, deadline=None)
@given(st.floats(-100, 5), st.floats(-4, 3), st.floats(-4, 3))
def test_jensen_bound(lam, la, lb):
    ez, einv = gig_moments(10 ** la, 10 ** lb, lam)
    assert ez * einv >= 1 - 1e-10


def test_moments_match_quadrature():
    rng = np.random.default_rng(42)
    for _ in range(50):
        lam = rng.uniform(-50, 5)
        w = 10 ** rng.uniform(-4, 3)
        ratio = 10 ** rng.uniform(-2, 2)
        a, b = w * ratio, w / ratio
        ez, einv = gig_moments(a, b, lam)
        qz, qinv = quad_gig_moments(a, b, lam)
        assert ez == pytest.approx(qz, rel=1e-8)
        assert einv == pytest.approx(qinv, rel=1e-8)
