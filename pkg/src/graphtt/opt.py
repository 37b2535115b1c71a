"""Graph-regularized TT completion by block-coordinate descent over core fibers.

The objective is

    ||O * (Y - X)||_F^2 + sum_d beta_d tr(G3_d^T L_d G3_d)

where ``X`` is the TT reconstruction and ``G3_d`` the ``J_d x (R_d R_{d+1})``
unfolding of core ``d``. Each fiber ``G_d[k, l, :]`` enters quadratically, so a
fiber update is a ``J_d x J_d`` SPD solve. Only observed entries are touched:
the solver keeps the index list of ``O`` and a running residual on it.
"""

from __future__ import annotations

import csv
import logging
import time
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import linalg

from ._kernels import (apply_fiber, core_residual, fiber_moments, fiber_sweep, left_step,
                       right_step)
from .data import as_mask, gaussian_fill
from .graph import GraphLaplacian, default_laplacians
from .metrics import rse as _rse
from .tensor import TensorTrain, fold_core, tt_reconstruct, tt_svd, unfold_core

log = logging.getLogger(__name__)

DEFAULT_CORE_CAP = 4096


class SingularSystemWarning(RuntimeWarning):
    """A normal-equation matrix was singular; the minimizer nearest the old value was used."""


class SystemTooLargeError(MemoryError):
    pass


@dataclass
class OptConfig:
    ranks: list
    beta0: float = 0.5
    laplacians: list | None = None
    max_sweeps: int = 200
    rel_change_tol: float = 1e-6
    seed: int = 0
    update: str = "fiber"
    core_cap: int = DEFAULT_CORE_CAP

    def __post_init__(self):
        self.ranks = [int(r) for r in self.ranks]
        if self.ranks[0] != 1 or self.ranks[-1] != 1:
            raise ValueError("boundary ranks must be 1")
        if self.beta0 < 0:
            raise ValueError("beta0 must be nonnegative")
        if not self.rel_change_tol > 0:
            raise ValueError("rel_change_tol must be positive")
        if self.update not in ("fiber", "core"):
            raise ValueError(f"unknown update kind {self.update!r}")


@dataclass
class ObservedEntries:
    """Coordinates ``idx`` (D x n) and values of the observed entries of ``Y``."""

    idx: np.ndarray
    values: np.ndarray
    shape: tuple

    @classmethod
    def from_mask(cls, Y, O) -> "ObservedEntries":
        Y = np.asarray(Y, dtype=float)
        ind = as_mask(O).indicator
        if ind.shape != Y.shape:
            raise ValueError(f"mask shape {ind.shape} does not match data shape {Y.shape}")
        idx = np.array(np.nonzero(ind), dtype=np.intp).reshape(Y.ndim, -1)
        return cls(idx, Y[ind], Y.shape)

    @property
    def count(self) -> int:
        return self.values.size


def left_vectors(tt: TensorTrain, obs: ObservedEntries, d: int) -> np.ndarray:
    """Row vectors ``G_0[j_0] ... G_{d-1}[j_{d-1}]`` for every observed entry, shape (n, R_d)."""
    v = np.ones((obs.count, 1))
    for t in range(d):
        v = left_step(v, tt.cores[t], obs.idx[t])
    return v


def right_vectors(tt: TensorTrain, obs: ObservedEntries, d: int) -> np.ndarray:
    """Column vectors ``G_{d+1}[j_{d+1}] ... G_{D-1}[j_{D-1}]``, shape (n, R_{d+1})."""
    v = np.ones((obs.count, 1))
    for t in range(tt.ndim - 1, d, -1):
        v = right_step(tt.cores[t], obs.idx[t], v)
    return v


def _all_right_vectors(tt: TensorTrain, obs: ObservedEntries) -> list[np.ndarray]:
    D = tt.ndim
    out = [None] * D
    v = np.ones((obs.count, 1))
    out[D - 1] = v
    for t in range(D - 1, 0, -1):
        v = right_step(tt.cores[t], obs.idx[t], v)
        out[t - 1] = v
    return out


def predict(tt: TensorTrain, obs: ObservedEntries) -> np.ndarray:
    return right_vectors(tt, obs, -1)[:, 0] if tt.ndim else np.zeros(obs.count)


def beta_schedule(beta0: float, init_tt: TensorTrain) -> list[float]:
    """``beta_d = beta0 / ||G0_d||_F^2`` (``beta0`` itself for an all-zero core)."""
    out = []
    for core in init_tt.cores:
        tr = float(np.sum(core ** 2))
        out.append(beta0 / tr if tr > 0 else float(beta0))
    return out


def regularizer(tt: TensorTrain, betas, laplacians) -> float:
    total = 0.0
    for core, beta, L in zip(tt.cores, betas, laplacians):
        if beta == 0:
            continue
        g3 = unfold_core(core)
        total += beta * float(np.sum(g3 * (L.matrix @ g3)))
    return total


def objective(tt: TensorTrain, Y, O, betas, laplacians) -> float:
    """Masked squared error plus the per-core graph penalties."""
    Y = np.asarray(Y, dtype=float)
    ind = as_mask(O).indicator
    if ind.shape != Y.shape or tuple(tt.shape) != Y.shape:
        raise ValueError("tensor, mask and TT shapes must agree")
    resid = np.where(ind, Y - tt_reconstruct(tt), 0.0)
    return float(np.sum(resid ** 2)) + regularizer(tt, betas, laplacians)


def _solve_psd(A: np.ndarray, b: np.ndarray, x_old: np.ndarray) -> np.ndarray:
    """Minimize ``x^T A x - 2 b^T x``; on a singular ``A`` keep the null-space part of ``x_old``."""
    try:
        return linalg.cho_solve(linalg.cho_factor(A, check_finite=False), b, check_finite=False)
    except linalg.LinAlgError:
        warnings.warn("singular normal equations; using the pseudo-inverse step", SingularSystemWarning,
                      stacklevel=3)
        step = linalg.lstsq(A, b - A @ x_old, check_finite=False)[0]
        return x_old + step


@dataclass
class OptState:
    """Iterate of the fiber solver.

    Besides the TT and the penalty weights it caches the observed entries and
    their residual ``y - x`` so fiber updates never touch the dense tensor.
    """

    tt: TensorTrain
    betas: list
    laplacians: list
    obs: ObservedEntries
    objective_trace: list = field(default_factory=list)
    sweep_count: int = 0
    max_system_dim: int = 0
    residual: np.ndarray | None = None

    @classmethod
    def create(cls, tt: TensorTrain, Y, O, betas, laplacians) -> "OptState":
        state = cls(tt.copy(), list(betas), list(laplacians), ObservedEntries.from_mask(Y, O))
        state.refresh_residual()
        return state

    def refresh_residual(self) -> None:
        self.residual = self.obs.values - predict(self.tt, self.obs)

    def objective(self) -> float:
        return float(self.residual @ self.residual) + regularizer(self.tt, self.betas, self.laplacians)


def _fiber_step(state: OptState, d: int, k: int, l: int, lv: np.ndarray, rv: np.ndarray) -> np.ndarray:
    # lv, rv are transposed, (R_d, n) and (R_{d+1}, n), for contiguous rows
    core = state.tt.cores[d]
    J = core.shape[2]
    j = state.obs.idx[d]
    lk, rl = lv[k], rv[l]
    g_old = core[k, l, :].copy()
    diag, mu = fiber_moments(j, lk, rl, state.residual, g_old, J)
    ups = np.diag(diag)
    if state.betas[d] != 0:
        ups += state.betas[d] * state.laplacians[d].matrix
    g_new = _solve_psd(ups, mu, g_old)
    core[k, l, :] = g_new
    apply_fiber(j, lk, rl, state.residual, g_new - g_old)
    state.max_system_dim = max(state.max_system_dim, J)
    return g_new


def _fast_fibers(state: OptState, d: int, lvt: np.ndarray, rvt: np.ndarray) -> None:
    core = np.ascontiguousarray(state.tt.cores[d])
    R0 = core.shape[0]
    lap = np.ascontiguousarray(state.laplacians[d].matrix, dtype=float)
    p = 0
    while p >= 0:
        p = fiber_sweep(state.obs.idx[d], lvt, rvt, state.residual, core, float(state.betas[d]), lap, p)
        if p >= 0:
            # non-PD system: the Python path handles the pseudo-inverse fallback
            state.tt.cores[d] = core
            _fiber_step(state, d, p % R0, p // R0, lvt, rvt)
            p += 1
    state.tt.cores[d] = core
    state.max_system_dim = max(state.max_system_dim, core.shape[2])


def fiber_normal_equations(state: OptState, d: int, p: int) -> tuple[np.ndarray, np.ndarray]:
    """``(Upsilon, mu)`` of fiber ``p = l * R_d + k`` of core ``d`` at the current iterate."""
    core = state.tt.cores[d]
    k, l = p % core.shape[0], p // core.shape[0]
    lv, rv = left_vectors(state.tt, state.obs, d), right_vectors(state.tt, state.obs, d)
    j = state.obs.idx[d]
    J = core.shape[2]
    kv = lv[:, k] * rv[:, l]
    partial = state.residual + core[k, l, j] * kv
    ups = np.diag(np.bincount(j, kv * kv, minlength=J)) + state.betas[d] * state.laplacians[d].matrix
    return ups, np.bincount(j, partial * kv, minlength=J)


def fiber_update(state: OptState, d: int, p: int) -> np.ndarray:
    """Replace fiber ``p`` of core ``d`` (``p = r_{d+1} R_d + r_d``) by its exact minimizer."""
    core = state.tt.cores[d]
    R0, R1 = core.shape[:2]
    if not 0 <= p < R0 * R1:
        raise IndexError(f"fiber index {p} out of range for core {d}")
    lv, rv = left_vectors(state.tt, state.obs, d), right_vectors(state.tt, state.obs, d)
    return _fiber_step(state, d, p % R0, p // R0, np.ascontiguousarray(lv.T), np.ascontiguousarray(rv.T))


def _design_rows(lv: np.ndarray, rv: np.ndarray) -> np.ndarray:
    # kron(r_e, l_e) with the r_d index fastest
    return np.einsum("nb,na->nba", rv, lv).reshape(lv.shape[0], -1)


def core_system_dim(shape, ranks, d: int) -> int:
    return int(shape[d]) * int(ranks[d]) * int(ranks[d + 1])


def core_update(state: OptState, d: int, cap: int = DEFAULT_CORE_CAP,
                lv: np.ndarray | None = None, rv: np.ndarray | None = None) -> np.ndarray:
    """Jointly minimize over all fibers of core ``d`` (a ``J_d R_d R_{d+1}`` system)."""
    core = state.tt.cores[d]
    R0, R1, J = core.shape
    P = R0 * R1
    n = J * P
    if n > cap:
        raise SystemTooLargeError(
            f"core {d} update needs a {n}x{n} system ({J}*{R0}*{R1}); cap is {cap}")
    if lv is None:
        lv = left_vectors(state.tt, state.obs, d)
    if rv is None:
        rv = right_vectors(state.tt, state.obs, d)
    j = state.obs.idx[d]
    K = _design_rows(lv, rv)
    H = np.zeros((J, P, J, P))
    rhs = np.zeros((J, P))
    y = state.obs.values
    for jj in range(J):
        sel = j == jj
        Kj = K[sel]
        H[jj, :, jj, :] = Kj.T @ Kj
        rhs[jj] = Kj.T @ y[sel]
    H = H.reshape(n, n)
    if state.betas[d] != 0:
        H += state.betas[d] * np.kron(state.laplacians[d].matrix, np.eye(P))
    g_old = unfold_core(core).reshape(n)
    sol = _solve_psd(H, rhs.reshape(n), g_old).reshape(J, P)
    state.tt.cores[d] = fold_core(sol, R0, R1)
    state.max_system_dim = max(state.max_system_dim, n)
    state.residual = y - np.einsum("np,np->n", K, sol[j])
    return state.tt.cores[d]


def slice_update_baseline(state: OptState, d: int, jd: int,
                          lv: np.ndarray | None = None, rv: np.ndarray | None = None) -> np.ndarray:
    """Unregularized least-squares update of frontal slice ``jd`` (minimum-norm if rank deficient)."""
    core = state.tt.cores[d]
    R0, R1, _ = core.shape
    if lv is None:
        lv = left_vectors(state.tt, state.obs, d)
    if rv is None:
        rv = right_vectors(state.tt, state.obs, d)
    sel = state.obs.idx[d] == jd
    K = _design_rows(lv[sel], rv[sel])
    y = state.obs.values[sel]
    if K.shape[0] == 0:
        sol = np.zeros(R0 * R1)
    else:
        sol = linalg.lstsq(K, y, check_finite=False)[0]
    core[:, :, jd] = sol.reshape(R0, R1, order="F")
    state.residual[sel] = y - K @ sol
    state.max_system_dim = max(state.max_system_dim, R0 * R1)
    return sol


def init_tt(Y, O, ranks, seed) -> TensorTrain:
    """Fill missing entries with Gaussian draws matched to the observed data, then TT-SVD."""
    filled = gaussian_fill(Y, O, np.random.default_rng(seed))
    return tt_svd(filled, ranks)


@dataclass
class OptResult:
    tt: TensorTrain
    objective_trace: list
    betas: list
    sweeps: int
    converged: bool
    rse_trace: list = field(default_factory=list)
    seconds: list = field(default_factory=list)
    max_system_dim: int = 0

    def __iter__(self):
        return iter((self.tt, self.objective_trace))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sweep", "objective", "rse", "seconds"])
            for i, (f, r, s) in enumerate(zip(self.objective_trace, self.rse_trace, self.seconds)):
                w.writerow([i, repr(f), repr(r), f"{s:.6f}"])


FiberCallback = Callable[[int, int, OptState], None]


def _rel_change(prev: float, cur: float) -> float:
    return abs(prev - cur) / max(abs(prev), np.finfo(float).tiny)


def _sweep(state: OptState, mode: str, cap: int, callback: FiberCallback | None) -> None:
    tt, obs = state.tt, state.obs
    rights = _all_right_vectors(tt, obs)
    lv = np.ones((obs.count, 1))
    for d in range(tt.ndim):
        rv = rights[d]
        # drop accumulated round-off before the core's block updates
        state.residual = core_residual(obs.values, lv, tt.cores[d], obs.idx[d], rv)
        core = tt.cores[d]
        R0, R1, J = core.shape
        if mode == "fiber":
            lvt, rvt = np.ascontiguousarray(lv.T), np.ascontiguousarray(rv.T)
            if callback is None:
                _fast_fibers(state, d, lvt, rvt)
            else:
                for l in range(R1):
                    for k in range(R0):
                        _fiber_step(state, d, k, l, lvt, rvt)
                        callback(d, l * R0 + k, state)
        elif mode == "core":
            core_update(state, d, cap, lv, rv)
            if callback is not None:
                callback(d, -1, state)
        else:
            for jd in range(J):
                slice_update_baseline(state, d, jd, lv, rv)
            if callback is not None:
                callback(d, -1, state)
        lv = left_step(lv, tt.cores[d], obs.idx[d])


def _run(Y, O, tt0: TensorTrain, betas, laplacians, mode, max_sweeps, tol, cap,
         reference, callback) -> OptResult:
    state = OptState.create(tt0, Y, O, betas, laplacians)
    if state.obs.count == 0:
        raise ValueError("at least one observed entry is required")
    ref = None if reference is None else np.asarray(reference, dtype=float)

    def rse_now():
        return _rse(ref, tt_reconstruct(state.tt)) if ref is not None else float("nan")

    t0 = time.perf_counter()
    trace, rses, secs = [state.objective()], [rse_now()], [0.0]
    converged = False
    for _ in range(max_sweeps):
        _sweep(state, mode, cap, callback)
        state.sweep_count += 1
        trace.append(state.objective())
        rses.append(rse_now())
        secs.append(time.perf_counter() - t0)
        log.debug("sweep %d objective %.6g", state.sweep_count, trace[-1])
        if _rel_change(trace[-2], trace[-1]) < tol:
            converged = True
            break
    state.objective_trace = trace
    return OptResult(state.tt, trace, list(betas), state.sweep_count, converged, rses, secs,
                     state.max_system_dim)


def run_graphtt_opt(Y, O, config: OptConfig, reference=None,
                    callback: FiberCallback | None = None, init: TensorTrain | None = None) -> OptResult:
    """Graph-regularized completion by fiber (or whole-core) coordinate descent.

    ``reference`` is an optional ground truth used only for the RSE trace.
    ``callback(d, p, state)`` runs after every block update.
    """
    Y = np.asarray(Y, dtype=float)
    if len(config.ranks) != Y.ndim + 1:
        raise ValueError(f"need {Y.ndim + 1} ranks, got {len(config.ranks)}")
    laplacians = config.laplacians or default_laplacians(Y.shape)
    if [L.size for L in laplacians] != list(Y.shape):
        raise ValueError("one Laplacian per mode with matching size is required")
    tt0 = init if init is not None else init_tt(Y, O, config.ranks, config.seed)
    betas = beta_schedule(config.beta0, tt0)
    return _run(Y, O, tt0, betas, laplacians, config.update, config.max_sweeps,
                config.rel_change_tol, config.core_cap, reference, callback)


def run_baseline_als(Y, O, ranks, max_sweeps: int = 200, tol: float = 1e-6, seed: int = 0,
                     reference=None, init: TensorTrain | None = None) -> OptResult:
    """Per-slice least-squares ALS without any graph term."""
    Y = np.asarray(Y, dtype=float)
    tt0 = init if init is not None else init_tt(Y, O, ranks, seed)
    laplacians = [GraphLaplacian.identity(n) for n in Y.shape]
    return _run(Y, O, tt0, [0.0] * Y.ndim, laplacians, "slice", max_sweeps, tol, DEFAULT_CORE_CAP,
                reference, None)
