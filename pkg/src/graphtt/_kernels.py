"""Compiled single-pass loops over observed entries."""

import numpy as np
from numba import njit


@njit(cache=True)
def fiber_moments(j, lk, rl, resid, g_old, J):
    """Diagonal of the data Hessian and the right-hand side for one fiber."""
    diag = np.zeros(J)
    mu = np.zeros(J)
    for e in range(j.shape[0]):
        kv = lk[e] * rl[e]
        jj = j[e]
        diag[jj] += kv * kv
        mu[jj] += (resid[e] + g_old[jj] * kv) * kv
    return diag, mu


@njit(cache=True)
def apply_fiber(j, lk, rl, resid, delta):
    """``resid -= delta[j] * lk * rl`` in place."""
    for e in range(j.shape[0]):
        resid[e] -= delta[j[e]] * lk[e] * rl[e]


@njit(cache=True)
def cholesky_solve(A, b):
    """Solve ``A x = b`` for SPD ``A``; returns ``(x, ok)`` with ``ok`` False on a nonpositive pivot."""
    n = A.shape[0]
    L = np.zeros((n, n))
    x = np.zeros(n)
    for i in range(n):
        for k in range(i + 1):
            s = A[i, k]
            for m in range(k):
                s -= L[i, m] * L[k, m]
            if i == k:
                if not s > 0.0:
                    return x, False
                L[i, i] = np.sqrt(s)
            else:
                L[i, k] = s / L[k, k]
    y = np.zeros(n)
    for i in range(n):
        s = b[i]
        for m in range(i):
            s -= L[i, m] * y[m]
        y[i] = s / L[i, i]
    for i in range(n - 1, -1, -1):
        s = y[i]
        for m in range(i + 1, n):
            s -= L[m, i] * x[m]
        x[i] = s / L[i, i]
    return x, True


@njit(cache=True)
def fiber_sweep(j, lvt, rvt, resid, core, beta, lap, start):
    """Update fibers ``start, start+1, ...`` of ``core`` in place (``p = l * R_d + k``).

    Stops early and returns the index of the first fiber whose system is not
    positive definite, or -1 when every fiber was updated.
    """
    R0, R1, J = core.shape
    for p in range(start, R0 * R1):
        k = p % R0
        l = p // R0
        g_old = core[k, l, :].copy()
        diag, mu = fiber_moments(j, lvt[k], rvt[l], resid, g_old, J)
        A = beta * lap
        for i in range(J):
            A[i, i] += diag[i]
        g_new, ok = cholesky_solve(A, mu)
        if not ok:
            return p
        core[k, l, :] = g_new
        apply_fiber(j, lvt[k], rvt[l], resid, g_new - g_old)
    return -1


@njit(cache=True)
def left_step(v, core, j):
    """``out[e] = v[e] @ core[:, :, j[e]]``."""
    n = j.shape[0]
    R0, R1 = core.shape[0], core.shape[1]
    out = np.zeros((n, R1))
    for e in range(n):
        jj = j[e]
        for a in range(R0):
            va = v[e, a]
            for b in range(R1):
                out[e, b] += va * core[a, b, jj]
    return out


@njit(cache=True)
def right_step(core, j, v):
    """``out[e] = core[:, :, j[e]] @ v[e]``."""
    n = j.shape[0]
    R0, R1 = core.shape[0], core.shape[1]
    out = np.zeros((n, R0))
    for e in range(n):
        jj = j[e]
        for a in range(R0):
            s = 0.0
            for b in range(R1):
                s += core[a, b, jj] * v[e, b]
            out[e, a] = s
    return out


@njit(cache=True)
def core_residual(y, lv, core, j, rv):
    """``y[e] - lv[e] @ core[:, :, j[e]] @ rv[e]``."""
    n = j.shape[0]
    R0, R1 = core.shape[0], core.shape[1]
    out = np.empty(n)
    for e in range(n):
        jj = j[e]
        s = 0.0
        for a in range(R0):
            t = 0.0
            for b in range(R1):
                t += core[a, b, jj] * rv[e, b]
            s += lv[e, a] * t
        out[e] = y[e] - s
    return out


@njit(cache=True)
def moment_left_step(lbar, Ml, mean, var, j):
    """Propagate first and second moments of left row vectors through one core.

    ``mean`` is (R0, R1, J) and ``var[a, b, jj]`` the variance of entry
    ``(a, b, jj)``; entries of distinct fibers are independent.
    """
    n = j.shape[0]
    R0, R1 = mean.shape[0], mean.shape[1]
    lout = np.zeros((n, R1))
    Mout = np.zeros((n, R1, R1))
    T = np.zeros((R0, R1))
    for e in range(n):
        jj = j[e]
        for a in range(R0):
            la = lbar[e, a]
            for b in range(R1):
                lout[e, b] += la * mean[a, b, jj]
        # T = Ml @ G
        for a in range(R0):
            for b in range(R1):
                s = 0.0
                for c in range(R0):
                    s += Ml[e, a, c] * mean[c, b, jj]
                T[a, b] = s
        for b in range(R1):
            for b2 in range(b, R1):
                s = 0.0
                for a in range(R0):
                    s += mean[a, b, jj] * T[a, b2]
                Mout[e, b, b2] = s
                Mout[e, b2, b] = s
            s = 0.0
            for a in range(R0):
                s += Ml[e, a, a] * var[a, b, jj]
            Mout[e, b, b] += s
    return lout, Mout


@njit(cache=True)
def moment_right_step(rbar, Nr, mean, var, j):
    """Right-vector counterpart of :func:`moment_left_step`."""
    n = j.shape[0]
    R0, R1 = mean.shape[0], mean.shape[1]
    rout = np.zeros((n, R0))
    Nout = np.zeros((n, R0, R0))
    T = np.zeros((R0, R1))
    for e in range(n):
        jj = j[e]
        for a in range(R0):
            s = 0.0
            for b in range(R1):
                s += mean[a, b, jj] * rbar[e, b]
            rout[e, a] = s
        # T = G @ Nr
        for a in range(R0):
            for b in range(R1):
                s = 0.0
                for c in range(R1):
                    s += mean[a, c, jj] * Nr[e, c, b]
                T[a, b] = s
        for a in range(R0):
            for a2 in range(a, R0):
                s = 0.0
                for b in range(R1):
                    s += T[a, b] * mean[a2, b, jj]
                Nout[e, a, a2] = s
                Nout[e, a2, a] = s
            s = 0.0
            for b in range(R1):
                s += var[a, b, jj] * Nr[e, b, b]
            Nout[e, a, a] += s
    return rout, Nout
