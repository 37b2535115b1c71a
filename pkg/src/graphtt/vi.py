"""Mean-field variational Bayes for graph-regularized TT completion with rank learning.

Model
-----
* ``y = <G_0, ..., G_{D-1}> + noise`` on observed entries, noise precision ``tau ~ Gamma``.
* Each fiber ``G_d[k, l, :] ~ N(0, z_d[k] z_{d+1}[l] L_d^{-1})`` where ``z_b`` is a
  vector of slice scales on rank boundary ``b`` (``z_0 = z_D = 1``).
* ``z_b[k] ~ GIG(a_b[k], b, lam)`` and ``a_b[k] ~ Gamma(c, f)``.

The variational family factorizes over fibers, slice scales, ``a`` and ``tau``.
Slices whose scale collapses are pruned, which shrinks the TT ranks.

All expectations of products along the chain are propagated per observed
entry: for left row vectors ``l`` we keep ``E[l]`` and ``E[l l^T]``; because
distinct fibers are independent, one core maps them as

    E[l' l'^T] = Gbar^T E[l l^T] Gbar + diag(diag(E[l l^T]) @ V)

with ``V[a, b]`` the variance of ``G[a, b, j]``.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from ._kernels import moment_left_step, moment_right_step
from .data import as_mask
from .gig import gig_moments
from .graph import default_laplacians
from .metrics import rse as _rse
from .opt import ObservedEntries, init_tt
from .tensor import TensorTrain, symmetric_gauge, tt_reconstruct

log = logging.getLogger(__name__)

C_HAT_FLOOR = 1e-3
B_WEIGHTS = {"derived": (1.0, 1.0), "symmetric_half": (0.5, 0.5), "printed": (0.5, 1.0)}


@dataclass
class VIConfig:
    """Priors and run controls.

    ``b_weights`` sets the factors on the left/right neighbor sums of the
    slice-scale update: ``derived`` (1, 1), ``symmetric_half`` (1/2, 1/2) or
    ``printed`` (1/2, 1). ``laplacian_jitter`` adds ``eps * I`` to every graph
    Laplacian so the fiber prior is proper.

    A run stops once the mean reconstruction changes by less than ``tol``
    (relative) and no ``E[1/z]`` moves by more than ``scale_tol`` (relative),
    so slices that are still collapsing get the chance to be pruned.
    """

    init_ranks: list
    gig_lambda: float = -0.5
    gig_b: float = 1e-6
    gamma_c: float = 1e-6
    gamma_f: float = 1e-6
    tau_alpha: float = 1e-6
    tau_beta: float = 1e-6
    prune_threshold: float = 1e-7
    laplacians: list | None = None
    laplacian_jitter: float = 1.0
    max_iters: int = 300
    tol: float = 1e-6
    scale_tol: float = 1e-2
    seed: int = 0
    b_weights: str = "symmetric_half"
    init_cov: float = 1e-3
    freeze_hyper: bool = False
    point_mass: bool = False

    def __post_init__(self):
        self.init_ranks = [int(r) for r in self.init_ranks]
        if self.init_ranks[0] != 1 or self.init_ranks[-1] != 1:
            raise ValueError("boundary ranks must be 1")
        if self.prune_threshold < 0:
            raise ValueError("prune_threshold must be nonnegative")
        if not self.gig_b > 0:
            raise ValueError("gig_b must be positive so that b_hat stays positive")
        for name in ("gamma_c", "gamma_f", "tau_alpha", "tau_beta"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.b_weights not in B_WEIGHTS:
            raise ValueError(f"b_weights must be one of {sorted(B_WEIGHTS)}")
        if not (self.tol > 0 and self.scale_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.laplacian_jitter < 0:
            raise ValueError("laplacian_jitter must be nonnegative")


@dataclass
class FiberPosterior:
    mean: np.ndarray
    cov: np.ndarray


@dataclass
class GIGPosterior:
    a_hat: np.ndarray
    b_hat: np.ndarray
    lambda_hat: np.ndarray


@dataclass
class NoisePosterior:
    alpha_hat: float
    beta_hat: float

    @property
    def mean(self) -> float:
        return self.alpha_hat / self.beta_hat


@dataclass
class VIState:
    """Variational parameters.

    ``means[d]`` is (S_d, S_{d+1}, J_d) and ``covs[d]`` (S_d, S_{d+1}, J_d, J_d).
    Per rank boundary ``b`` (0..D) the lists ``ez``/``einv`` hold ``E[z_b]`` and
    ``E[1/z_b]``; ``z``, ``c_hat`` and ``f_hat`` are ``None`` at the two fixed ends.
    """

    means: list
    covs: list
    laplacians: list
    ez: list
    einv: list
    z: list
    c_hat: list
    f_hat: list
    noise: NoisePosterior
    lam: float
    b_prior: float
    c_prior: float
    f_prior: float

    @property
    def ndim(self) -> int:
        return len(self.means)

    @property
    def ranks(self) -> list[int]:
        return [m.shape[0] for m in self.means] + [1]

    @property
    def e_tau(self) -> float:
        return self.noise.mean

    def e_a(self, b: int) -> np.ndarray:
        return self.c_hat[b] / self.f_hat[b]

    def mean_tt(self) -> TensorTrain:
        return TensorTrain([m.copy() for m in self.means])

    def fiber(self, d: int, p: int) -> FiberPosterior:
        S0 = self.means[d].shape[0]
        k, l = p % S0, p // S0
        return FiberPosterior(self.means[d][k, l].copy(), self.covs[d][k, l].copy())


def slice_variances(cov: np.ndarray) -> np.ndarray:
    """``V[k, l, j] = cov[k, l, j, j]`` as a contiguous (S_d, S_{d+1}, J) array."""
    return np.ascontiguousarray(np.diagonal(cov, axis1=2, axis2=3))


def lambda_hat(state: VIState, b: int) -> float:
    """Shape of the slice-scale posterior on boundary ``b``."""
    S = state.ranks
    J_left = state.means[b - 1].shape[2]
    J_right = state.means[b].shape[2]
    return state.lam - J_right * S[b + 1] / 2.0 - J_left * S[b - 1] / 2.0


def quad_forms(mean: np.ndarray, cov: np.ndarray, L: np.ndarray) -> np.ndarray:
    """``E[g^T L g] = nu^T L nu + tr(L Sigma)`` for every fiber, shape (S_d, S_{d+1})."""
    return (np.einsum("klj,ji,kli->kl", mean, L, mean, optimize=True)
            + np.einsum("ji,klij->kl", L, cov, optimize=True))


# ---------------------------------------------------------------- expectations


def expected_slice_kron(state: VIState, d: int, jd: int) -> np.ndarray:
    """``E[G[:, :, j] kron G[:, :, j]]``, shape (S_d^2, S_{d+1}^2).

    Only the diagonal-pair entries ``(k S_d + k, l S_{d+1} + l)`` pick up the
    fiber variance, since distinct fibers are independent.
    """
    G = state.means[d][:, :, jd]
    S0, S1 = G.shape
    out = np.kron(G, G)
    var = state.covs[d][:, :, jd, jd]
    rows = np.arange(S0) * (S0 + 1)
    cols = np.arange(S1) * (S1 + 1)
    out[np.ix_(rows, cols)] += var
    return out


def expected_subchain_products(state: VIState, d: int) -> np.ndarray:
    """Dense ``E[KG]`` of shape (P, P, N), ``P = S_d S_{d+1}``, ``N`` = product of the other dims.

    ``E[KG][q, p, i] = E[(r kron l)_q (r kron l)_p]`` at multi-index ``i`` of
    the remaining modes (first index fastest), assembled by chaining
    :func:`expected_slice_kron` factors. Meant for small problems and tests.
    """
    D = state.ndim
    left = np.ones((1, 1))  # rows: index combos of modes < d
    for t in range(d):
        J = state.means[t].shape[2]
        left = np.concatenate([left @ expected_slice_kron(state, t, j) for j in range(J)], axis=0)
    right = np.ones((1, 1))  # columns: index combos of modes > d
    for t in range(D - 1, d, -1):
        J = state.means[t].shape[2]
        blocks = [expected_slice_kron(state, t, j) @ right for j in range(J)]
        # lower modes vary fastest along the columns
        right = np.stack(blocks, axis=2).reshape(blocks[0].shape[0], -1)
    S0, S1 = state.means[d].shape[:2]
    EL = left.reshape(-1, S0, S0)  # [i_left, m, k]
    ER = right.reshape(S1, S1, -1)  # [n, l, i_right]
    kg = np.einsum("imk,nlr->nmlkri", EL, ER)
    # q = n S0 + m, p = l S0 + k, i = i_left + N_left * i_right
    return kg.reshape(S0 * S1, S0 * S1, -1)


def _var(state: VIState, d: int, point_mass: bool) -> np.ndarray:
    if point_mass:
        return np.zeros(state.means[d].shape)
    return slice_variances(state.covs[d])


def left_moments(state: VIState, obs: ObservedEntries, d: int, point_mass=False):
    """``E[l]`` (n, S_d) and ``E[l l^T]`` (n, S_d, S_d) over cores ``0..d-1``."""
    lbar, Ml = np.ones((obs.count, 1)), np.ones((obs.count, 1, 1))
    for t in range(d):
        lbar, Ml = moment_left_step(lbar, Ml, state.means[t], _var(state, t, point_mass), obs.idx[t])
    return lbar, Ml


def right_moments(state: VIState, obs: ObservedEntries, d: int, point_mass=False):
    """``E[r]`` (n, S_{d+1}) and ``E[r r^T]`` over cores ``d+1..D-1``."""
    rbar, Nr = np.ones((obs.count, 1)), np.ones((obs.count, 1, 1))
    for t in range(state.ndim - 1, d, -1):
        rbar, Nr = moment_right_step(rbar, Nr, state.means[t], _var(state, t, point_mass), obs.idx[t])
    return rbar, Nr


def _groups(j: np.ndarray, J: int):
    order = np.argsort(j, kind="stable")
    bounds = np.concatenate([[0], np.cumsum(np.bincount(j, minlength=J))])
    return order, bounds


def core_statistics(obs: ObservedEntries, d: int, J: int, lbar, Ml, rbar, Nr):
    """Sufficient statistics of core ``d`` given the chain moments around it.

    ``H[j, m, k, n, l] = sum_{e in j} E[l_m l_k] E[r_n r_l]`` and
    ``B[j, k, l] = sum_{e in j} y_e E[l_k] E[r_l]``.
    """
    S0, S1 = lbar.shape[1], rbar.shape[1]
    order, bounds = _groups(obs.idx[d], J)
    H = np.zeros((J, S0 * S0, S1 * S1))
    B = np.zeros((J, S0, S1))
    Mf = Ml.reshape(-1, S0 * S0)
    Nf = Nr.reshape(-1, S1 * S1)
    for jj in range(J):
        sel = order[bounds[jj]:bounds[jj + 1]]
        if sel.size == 0:
            continue
        H[jj] = Mf[sel].T @ Nf[sel]
        B[jj] = (lbar[sel] * obs.values[sel, None]).T @ rbar[sel]
    return H.reshape(J, S0, S0, S1, S1), B


def _chol_inverse(A: np.ndarray) -> np.ndarray:
    try:
        c = linalg.cho_factor(A, lower=True, check_finite=False)
    except linalg.LinAlgError as exc:
        raise linalg.LinAlgError("fiber posterior precision is not positive definite") from exc
    inv = linalg.cho_solve(c, np.eye(A.shape[0]), check_finite=False)
    return (inv + inv.T) / 2.0


def _fiber_posterior(state: VIState, d: int, k: int, l: int, H, B, e_tau: float, point_mass: bool):
    mean = state.means[d]
    J = mean.shape[2]
    hkk = H[:, k, k, l, l]
    cross = np.einsum("mnj,jmn->j", mean, H[:, :, k, :, l]) - mean[k, l] * hkk
    prec = state.einv[d][k] * state.einv[d + 1][l] * state.laplacians[d]
    prec[np.diag_indices(J)] += e_tau * hkk
    cov = _chol_inverse(prec)
    nu = cov @ (e_tau * (B[:, k, l] - cross))
    mean[k, l] = nu
    state.covs[d][k, l] = 0.0 if point_mass else cov
    return FiberPosterior(nu, state.covs[d][k, l])


def update_fiber_posterior(state: VIState, Y, O, d: int, p: int, point_mass: bool = False) -> FiberPosterior:
    """Refresh ``q`` of fiber ``p = l S_d + k`` of core ``d`` given everything else."""
    obs = ObservedEntries.from_mask(Y, O)
    lbar, Ml = left_moments(state, obs, d, point_mass)
    rbar, Nr = right_moments(state, obs, d, point_mass)
    J = state.means[d].shape[2]
    H, B = core_statistics(obs, d, J, lbar, Ml, rbar, Nr)
    S0 = state.means[d].shape[0]
    return _fiber_posterior(state, d, p % S0, p // S0, H, B, state.e_tau, point_mass)


def fiber_sweep(state: VIState, obs: ObservedEntries, point_mass: bool = False):
    """Update every fiber of every core in order; returns ``(E[x], E[x^2])`` on observed entries."""
    D = state.ndim
    rights = [None] * (D + 1)
    rbar, Nr = np.ones((obs.count, 1)), np.ones((obs.count, 1, 1))
    rights[D] = (rbar, Nr)
    for t in range(D - 1, 0, -1):
        rbar, Nr = moment_right_step(rbar, Nr, state.means[t], _var(state, t, point_mass), obs.idx[t])
        rights[t] = (rbar, Nr)
    lbar, Ml = np.ones((obs.count, 1)), np.ones((obs.count, 1, 1))
    e_tau = state.e_tau
    for d in range(D):
        rbar, Nr = rights[d + 1]
        rights[d + 1] = None
        S0, S1, J = state.means[d].shape
        H, B = core_statistics(obs, d, J, lbar, Ml, rbar, Nr)
        for l in range(S1):
            for k in range(S0):
                _fiber_posterior(state, d, k, l, H, B, e_tau, point_mass)
        lbar, Ml = moment_left_step(lbar, Ml, state.means[d], _var(state, d, point_mass), obs.idx[d])
    return lbar[:, 0], Ml[:, 0, 0]


# ---------------------------------------------------------- hyper-parameters


def update_a(state: VIState, b: int) -> tuple[np.ndarray, np.ndarray]:
    """Gamma posterior of the GIG rate ``a`` on boundary ``b``: ``(c_hat, f_hat)``."""
    c_hat = state.c_prior + lambda_hat(state, b) / 2.0
    if c_hat < C_HAT_FLOOR:
        if not getattr(state, "_c_floor_warned", False):
            log.warning("Gamma shape c_hat=%.4g is below %.0e; clamping", c_hat, C_HAT_FLOOR)
            state._c_floor_warned = True
        c_hat = C_HAT_FLOOR
    S = state.ranks[b]
    state.c_hat[b] = np.full(S, c_hat)
    state.f_hat[b] = state.f_prior + state.ez[b] / 2.0
    return state.c_hat[b], state.f_hat[b]


def update_z(state: VIState, b: int, b_weights: str = "derived") -> GIGPosterior:
    """GIG posterior of the slice scales on boundary ``b`` (1..D-1)."""
    wl, wr = B_WEIGHTS[b_weights]
    left = quad_forms(state.means[b - 1], state.covs[b - 1], state.laplacians[b - 1])  # (S_{b-1}, S_b)
    right = quad_forms(state.means[b], state.covs[b], state.laplacians[b])  # (S_b, S_{b+1})
    b_hat = state.b_prior + wl * (state.einv[b - 1] @ left) + wr * (right @ state.einv[b + 1])
    a_hat = state.e_a(b)
    lam = lambda_hat(state, b)
    lam_hat = np.full_like(b_hat, lam)
    ez = np.empty_like(b_hat)
    einv = np.empty_like(b_hat)
    for k in range(b_hat.size):
        ez[k], einv[k] = gig_moments(float(a_hat[k]), float(b_hat[k]), lam)
    state.z[b] = GIGPosterior(np.asarray(a_hat, dtype=float).copy(), b_hat, lam_hat)
    state.ez[b], state.einv[b] = ez, einv
    return state.z[b]


def update_tau_from_moments(state: VIState, y: np.ndarray, ex: np.ndarray, ex2: np.ndarray,
                            alpha: float, beta: float) -> NoisePosterior:
    bracket = float(y @ y - 2.0 * (y @ ex) + ex2.sum())
    beta_hat = beta + 0.5 * bracket
    if not beta_hat > 0:
        raise FloatingPointError(f"noise rate posterior is nonpositive ({beta_hat})")
    state.noise = NoisePosterior(alpha + y.size / 2.0, beta_hat)
    return state.noise


def update_tau(state: VIState, Y, O, alpha: float = 1e-6, beta: float = 1e-6) -> NoisePosterior:
    """Gamma posterior of the noise precision from the chained first and second moments."""
    obs = ObservedEntries.from_mask(Y, O)
    lbar, Ml = left_moments(state, obs, state.ndim)
    return update_tau_from_moments(state, obs.values, lbar[:, 0], Ml[:, 0, 0], alpha, beta)


def slice_powers(state: VIState, b: int) -> tuple[np.ndarray, np.ndarray]:
    """Mean second moments of ``G_{b-1}[:, k, :]`` and ``G_b[k, :, :]`` per index ``k``."""
    def power(mean, cov, axis):
        second = mean ** 2 + slice_variances(cov)
        other = tuple(a for a in range(3) if a != axis)
        return second.mean(axis=other)
    return power(state.means[b - 1], state.covs[b - 1], 1), power(state.means[b], state.covs[b], 0)


def prune_ranks(state: VIState, threshold: float) -> bool:
    """Drop rank indices whose slices on both sides have power below ``threshold``.

    Returns whether anything was removed. A boundary never loses its last index.
    """
    changed = False
    if threshold <= 0:
        return changed
    for b in range(1, state.ndim):
        pl, pr = slice_powers(state, b)
        keep = ~((pl < threshold) & (pr < threshold))
        if keep.all():
            continue
        if not keep.any():
            keep[np.argmax(pl + pr)] = True
        changed = True
        state.means[b - 1] = state.means[b - 1][:, keep]
        state.covs[b - 1] = state.covs[b - 1][:, keep]
        state.means[b] = state.means[b][keep]
        state.covs[b] = state.covs[b][keep]
        state.ez[b] = state.ez[b][keep]
        state.einv[b] = state.einv[b][keep]
        state.c_hat[b] = state.c_hat[b][keep]
        state.f_hat[b] = state.f_hat[b][keep]
        z = state.z[b]
        if z is not None:
            state.z[b] = GIGPosterior(z.a_hat[keep], z.b_hat[keep], z.lambda_hat[keep])
    return changed


# ------------------------------------------------------------------- driver


def init_state(Y, O, config: VIConfig, init: TensorTrain | None = None) -> VIState:
    """Posterior means from a balanced TT-SVD of the Gaussian-filled data; ``Sigma = init_cov * I``."""
    Y = np.asarray(Y, dtype=float)
    laps = config.laplacians or default_laplacians(Y.shape)
    if [L.size for L in laps] != list(Y.shape):
        raise ValueError("one Laplacian per mode with matching size is required")
    tt0 = init if init is not None else symmetric_gauge(init_tt(Y, O, config.init_ranks, config.seed))
    means = [np.array(c, dtype=float) for c in tt0.cores]
    covs = []
    for m in means:
        eye = np.eye(m.shape[2]) * (0.0 if config.point_mass else config.init_cov)
        covs.append(np.broadcast_to(eye, m.shape + (m.shape[2],)).copy())
    ranks = tt0.ranks
    D = len(means)
    matrices = [L.matrix + config.laplacian_jitter * np.eye(L.size) for L in laps]
    return VIState(
        means=means,
        covs=covs,
        laplacians=matrices,
        ez=[np.ones(r) for r in ranks],
        einv=[np.ones(r) for r in ranks],
        z=[None] * (D + 1),
        c_hat=[None] + [np.full(r, config.gamma_c) for r in ranks[1:-1]] + [None],
        f_hat=[None] + [np.full(r, config.gamma_f) for r in ranks[1:-1]] + [None],
        noise=NoisePosterior(config.tau_alpha, config.tau_beta),
        lam=config.gig_lambda,
        b_prior=config.gig_b,
        c_prior=config.gamma_c,
        f_prior=config.gamma_f,
    )


@dataclass
class VIResult:
    tt: TensorTrain
    ranks: list
    e_tau: float
    trace: list
    state: VIState
    iters: int
    converged: bool

    def __iter__(self):
        return iter((self.tt, self.ranks, self.e_tau, self.trace))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "rse", "current_ranks", "E_tau", "seconds"])
            for row in self.trace:
                w.writerow([row["iter"], repr(row["rse"]), ";".join(map(str, row["ranks"])),
                            repr(row["e_tau"]), f"{row['seconds']:.6f}"])


def _scale_drift(before, after) -> float:
    """Largest relative change of ``E[1/z]``; boundaries whose size changed count as moving."""
    worst = 0.0
    for a, b in zip(before, after):
        if a.shape != b.shape:
            return float("inf")
        worst = max(worst, float(np.max(np.abs(b - a) / np.maximum(np.abs(a), np.finfo(float).tiny))))
    return worst


def _hyper_updates(state: VIState, config: VIConfig, y, ex, ex2) -> None:
    D = state.ndim
    for b in range(1, D):
        update_a(state, b)
    for b in range(1, D):
        update_z(state, b, config.b_weights)
    update_tau_from_moments(state, y, ex, ex2, config.tau_alpha, config.tau_beta)


def run_graphtt_vi(Y, O, config: VIConfig, reference=None, init: TensorTrain | None = None) -> VIResult:
    """Coordinate-ascent VI: fibers, then ``a``, ``z``, ``tau``, then rank pruning, per iteration.

    Before the first sweep the hyper-parameter posteriors are fitted once to the
    initial means (with neighbor scales at 1) so that the vague priors do not
    shrink every fiber to zero on the first pass.
    """
    Y = np.asarray(Y, dtype=float)
    obs = ObservedEntries.from_mask(Y, O)
    if obs.count == 0:
        raise ValueError("at least one observed entry is required")
    state = init_state(Y, O, config, init)
    ref = None if reference is None else np.asarray(reference, dtype=float)
    t0 = time.perf_counter()
    xhat = tt_reconstruct(state.mean_tt())

    def record(it):
        trace.append({"iter": it, "rse": _rse(ref, xhat) if ref is not None else float("nan"),
                      "ranks": state.ranks, "e_tau": state.e_tau,
                      "seconds": time.perf_counter() - t0})

    trace: list = []
    if config.max_iters > 0 and not config.freeze_hyper:
        lbar, Ml = left_moments(state, obs, state.ndim, config.point_mass)
        _hyper_updates(state, config, obs.values, lbar[:, 0], Ml[:, 0, 0])
    record(0)
    converged = False
    it = 0
    for it in range(1, config.max_iters + 1):
        scales = [e.copy() for e in state.einv]
        ex, ex2 = fiber_sweep(state, obs, config.point_mass)
        if not config.freeze_hyper:
            _hyper_updates(state, config, obs.values, ex, ex2)
        drift = _scale_drift(scales, state.einv)
        pruned = prune_ranks(state, config.prune_threshold)
        new = tt_reconstruct(state.mean_tt())
        change = np.linalg.norm(new - xhat) / max(np.linalg.norm(xhat), np.finfo(float).tiny)
        xhat = new
        record(it)
        log.debug("iter %d ranks %s E[tau] %.4g change %.3g drift %.3g", it, state.ranks, state.e_tau,
                  change, drift)
        if change < config.tol and drift < config.scale_tol and not pruned:
            converged = True
            break
    return VIResult(state.mean_tt(), state.ranks, state.e_tau, trace, state, it if config.max_iters else 0,
                    converged)
