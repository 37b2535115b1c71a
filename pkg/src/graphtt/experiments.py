"""Reproducible problem builders and a uniform solver front end.

Every trial derives its random streams from ``(master_seed, trial)`` so trials
can run in any order or in parallel and still produce identical numbers.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .data import SyntheticSpec, add_noise, gen_synthetic_tt, random_mask, snr_to_sigma2
from .graph import default_laplacians
from .metrics import rse
from .opt import OptConfig, run_baseline_als, run_graphtt_opt
from .tensor import tt_reconstruct
from .vi import VIConfig, run_graphtt_vi

SOLVERS = ("opt", "vi", "baseline")


def trial_seeds(master_seed: int, trial: int) -> dict[str, int]:
    """Independent seeds for the cores, noise, mask and solver initialization of one trial."""
    ss = np.random.SeedSequence([int(master_seed), int(trial)])
    core, noise, mask, init = (int(s) for s in ss.generate_state(4))
    return {"cores": core, "noise": noise, "mask": mask, "init": init}


@dataclass
class Problem:
    truth: np.ndarray
    observed: np.ndarray
    mask: np.ndarray
    sigma2: float
    seeds: dict


def synthetic_problem(shape, true_ranks, snr_db, missing_rate, master_seed, trial,
                      noise_var=None) -> Problem:
    """Synthetic TT ground truth with Gaussian noise and a random mask.

    ``noise_var`` overrides the variance implied by ``snr_db`` when given.
    """
    seeds = trial_seeds(master_seed, trial)
    X, _ = gen_synthetic_tt(SyntheticSpec(tuple(shape), list(true_ranks), seed=seeds["cores"]))
    sigma2 = float(noise_var) if noise_var is not None else (
        snr_to_sigma2(X, snr_db) if snr_db is not None else 0.0)
    Y = add_noise(X, sigma2, seeds["noise"])
    O = random_mask(X.shape, missing_rate, seeds["mask"]).indicator
    return Problem(X, Y, O, sigma2, seeds)


def image_problem(img, missing_rate, noise_var, master_seed, trial) -> Problem:
    seeds = trial_seeds(master_seed, trial)
    X = np.asarray(img, dtype=float)
    Y = add_noise(X, noise_var, seeds["noise"])
    O = random_mask(X.shape, missing_rate, seeds["mask"]).indicator
    return Problem(X, Y, O, float(noise_var), seeds)


@dataclass
class SolveOutcome:
    solver: str
    estimate: np.ndarray
    result: object
    iters: int
    seconds: float

    def rse(self, truth) -> float:
        return rse(truth, self.estimate)


def solve(solver: str, Y, O, ranks, seed: int, reference=None, beta0: float = 0.5,
          max_iters: int | None = None, graph_alpha: float = 1.0, graph_kinds=None,
          opt_options: dict | None = None, vi_options: dict | None = None) -> SolveOutcome:
    """Run one solver with the package defaults plus optional overrides."""
    if solver not in SOLVERS:
        raise ValueError(f"unknown solver {solver!r}; choose from {SOLVERS}")
    Y = np.asarray(Y, dtype=float)
    laps = default_laplacians(Y.shape, graph_kinds, graph_alpha)
    t0 = time.perf_counter()
    if solver == "opt":
        kw = dict(opt_options or {})
        if max_iters is not None:
            kw["max_sweeps"] = max_iters
        res = run_graphtt_opt(Y, O, OptConfig(list(ranks), beta0=beta0, laplacians=laps, seed=seed, **kw),
                              reference=reference)
        tt, iters = res.tt, res.sweeps
    elif solver == "baseline":
        kw = dict(opt_options or {})
        kw.pop("update", None)
        kw.pop("core_cap", None)
        res = run_baseline_als(Y, O, list(ranks), max_sweeps=max_iters if max_iters is not None
                               else kw.get("max_sweeps", 200),
                               tol=kw.get("rel_change_tol", 1e-6), seed=seed, reference=reference)
        tt, iters = res.tt, res.sweeps
    else:
        kw = dict(vi_options or {})
        if max_iters is not None:
            kw["max_iters"] = max_iters
        res = run_graphtt_vi(Y, O, VIConfig(list(ranks), laplacians=laps, seed=seed, **kw),
                             reference=reference)
        tt, iters = res.tt, res.iters
    return SolveOutcome(solver, tt_reconstruct(tt), res, iters, time.perf_counter() - t0)
