"""Modified Bessel functions of the second kind in log space, and GIG moments.

The generalized inverse Gaussian density used here is

    p(z) = (a/b)^(lam/2) / (2 K_lam(sqrt(a b))) * z^(lam - 1) * exp(-(a z + b / z) / 2)
"""

from __future__ import annotations

import math

import mpmath
import numpy as np
from scipy import special


def log_bessel_k(order: float, x: float) -> float:
    """``log K_order(x)`` for ``x > 0``; symmetric in the sign of ``order``.

    Uses the exponentially scaled ``kve`` and switches to arbitrary precision
    when that over- or underflows (very large orders or tiny arguments).
    """
    x = float(x)
    if not x > 0:
        raise ValueError(f"Bessel argument must be positive, got {x}")
    v = abs(float(order))
    scaled = special.kve(v, x)
    if np.isfinite(scaled) and scaled > 0:
        return math.log(scaled) - x
    with mpmath.workdps(30):
        return float(mpmath.log(mpmath.besselk(v, x)))


def gig_moments(a_hat: float, b_hat: float, lambda_hat: float) -> tuple[float, float]:
    """``(E[z], E[1/z])`` of ``GIG(a_hat, b_hat, lambda_hat)``.

    ``E[1/z]`` is evaluated as ``sqrt(a/b) K_{lam-1}(w) / K_lam(w)``, which by the
    recurrence ``K_{lam+1} = K_{lam-1} + (2 lam / w) K_lam`` equals
    ``sqrt(a/b) K_{lam+1}(w) / K_lam(w) - 2 lam / b`` without the cancellation.
    """
    if not (a_hat > 0 and b_hat > 0):
        raise ValueError(f"GIG parameters must be positive, got a={a_hat}, b={b_hat}")
    w = math.sqrt(a_hat * b_hat)
    lk = log_bessel_k(lambda_hat, w)
    ez = math.sqrt(b_hat / a_hat) * math.exp(log_bessel_k(lambda_hat + 1.0, w) - lk)
    einv = math.sqrt(a_hat / b_hat) * math.exp(log_bessel_k(lambda_hat - 1.0, w) - lk)
    return ez, einv
