"""Command-line front end: ``graphtt {complete,synth-bench,compare-updates,metrics}``.

Settings come from an optional YAML file and are overridden by flags. The
effective settings are written to ``<out>/effective_config.yaml``. Progress
goes to stderr; results only to files.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import yaml

from . import io
from .data import add_noise, random_mask, snr_to_sigma2, stencil_mask
from .experiments import SOLVERS, solve, synthetic_problem, trial_seeds
from .graph import default_laplacians
from .metrics import psnr, rse, ssim
from .opt import (
    DEFAULT_CORE_CAP, OptConfig, SingularSystemWarning, core_system_dim, init_tt, run_graphtt_opt,
)
from .tensor import capped_ranks

log = logging.getLogger("graphtt")

DEFAULTS = {
    "solver": "vi",
    "seed": 0,
    "out": "graphtt-out",
    "ranks": None,
    "max_rank": 10,
    "beta0": 0.5,
    "max_iters": None,
    "missing_rate": 0.0,
    "snr_db": None,
    "noise_var": None,
    "graph": {"alpha": 1.0, "kinds": None},
    "opt": {},
    "vi": {},
}

FLAG_KEYS = ("solver", "beta0", "ranks", "missing_rate", "snr_db", "noise_var", "seed", "out", "max_iters")


class JobError(Exception):
    """A configuration or input problem; reported without a traceback."""


# ------------------------------------------------------------------ config


def parse_ranks(text: str) -> list[int]:
    try:
        return [int(t) for t in str(text).split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"ranks must be comma-separated integers, got {text!r}") from exc


def load_config(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise JobError(f"config file not found: {p}")
    data = yaml.safe_load(p.read_text()) or {}
    if not isinstance(data, dict):
        raise JobError(f"config file {p} must hold a mapping")
    return data


def effective_config(args) -> dict:
    cfg = {k: (dict(v) if isinstance(v, dict) else v) for k, v in DEFAULTS.items()}
    for key, value in load_config(args.config).items():
        key = key.replace("-", "_")
        if isinstance(value, dict) and isinstance(cfg.get(key), dict):
            cfg[key].update(value)
        else:
            cfg[key] = value
    for key in FLAG_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    for key in ("input", "mask", "reference", "estimate"):
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    if cfg["solver"] not in SOLVERS:
        raise JobError(f"unknown solver {cfg['solver']!r}")
    if "seed" not in cfg or cfg["seed"] is None:
        raise JobError("a seed is required")
    return cfg


def prepare_out(cfg) -> Path:
    out = Path(cfg["out"])
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise JobError(f"cannot create output directory {out}: {exc}") from exc
    (out / "effective_config.yaml").write_text(yaml.safe_dump(_plain(cfg), sort_keys=True))
    return out


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _ranks_for(cfg, shape) -> list[int]:
    if cfg.get("ranks"):
        ranks = [int(r) for r in cfg["ranks"]]
        if len(ranks) != len(shape) + 1:
            raise JobError(f"need {len(shape) + 1} ranks for shape {tuple(shape)}, got {ranks}")
        return ranks
    return capped_ranks(shape, int(cfg["max_rank"]))


def _solve_kwargs(cfg) -> dict:
    g = cfg.get("graph") or {}
    return {
        "beta0": float(cfg["beta0"]),
        "max_iters": None if cfg.get("max_iters") is None else int(cfg["max_iters"]),
        "graph_alpha": float(g.get("alpha", 1.0)),
        "graph_kinds": g.get("kinds"),
        "opt_options": dict(cfg.get("opt") or {}),
        "vi_options": dict(cfg.get("vi") or {}),
    }


# ------------------------------------------------------------------ complete


def _read_array(path) -> tuple[np.ndarray, bool]:
    p = Path(path)
    if not p.is_file():
        raise JobError(f"input file not found: {p}")
    try:
        if p.suffix.lower() == ".png":
            return io.load_png(p), True
        return io.load_tensor(p), False
    except (io.FormatError, OSError, ValueError) as exc:
        raise JobError(f"cannot read {p}: {exc}") from exc


def _read_mask(path, shape) -> np.ndarray:
    p = Path(path)
    if not p.is_file():
        raise JobError(f"mask file not found: {p}")
    try:
        if p.suffix.lower() == ".png":
            return stencil_mask(shape, io.load_stencil(p)).indicator
        m = io.load_tensor(p) != 0
    except (io.FormatError, OSError, ValueError) as exc:
        raise JobError(f"cannot read mask {p}: {exc}") from exc
    if m.shape != tuple(shape):
        raise JobError(f"mask shape {m.shape} does not match data shape {tuple(shape)}")
    return m


def _write_metrics(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["name", "rse", "psnr", "ssim"])
        for row in rows:
            w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])


def _image_ssim(X, Xhat) -> float:
    try:
        return ssim(np.clip(X, 0, 1), np.clip(Xhat, 0, 1))
    except ValueError:
        return float("nan")


def cmd_complete(cfg) -> int:
    if "input" not in cfg:
        raise JobError("complete needs an input file (--input or 'input' in the config)")
    X, is_image = _read_array(cfg["input"])
    seeds = trial_seeds(cfg["seed"], 0)
    if cfg.get("mask"):
        O = _read_mask(cfg["mask"], X.shape)
    else:
        O = random_mask(X.shape, float(cfg["missing_rate"]), seeds["mask"]).indicator
    if cfg.get("noise_var") is not None:
        sigma2 = float(cfg["noise_var"])
    elif cfg.get("snr_db") is not None:
        sigma2 = snr_to_sigma2(X, float(cfg["snr_db"]))
    else:
        sigma2 = 0.0
    Y = add_noise(X, sigma2, seeds["noise"])
    if not O.any():
        raise JobError("the mask leaves no observed entries")
    out = prepare_out(cfg)
    ranks = _ranks_for(cfg, X.shape)
    kw = _solve_kwargs(cfg)
    log.info("complete: solver=%s shape=%s ranks=%s beta0=%g observed=%d/%d",
             cfg["solver"], X.shape, ranks, kw["beta0"], int(O.sum()), O.size)
    outcome = solve(cfg["solver"], Y, O, ranks, seed=seeds["init"], reference=X, **kw)
    est = outcome.estimate
    name = Path(cfg["input"]).stem
    if is_image:
        io.save_png(out / "recovered.png", est)
        q = _image_ssim(X, est)
    else:
        io.save_tensor(out / "completed.gtt", est)
        q = float("nan")
    _write_metrics(out / "metrics.csv", [(name, rse(X, est), psnr(X, est), q)])
    outcome.result.write_csv(out / "convergence.csv")
    log.info("complete: rse=%.4g psnr=%.3f dB in %.1fs", rse(X, est), psnr(X, est), outcome.seconds)
    return 0


# ------------------------------------------------------------------ synth-bench


BENCH_COLUMNS = ["trial", "snr", "mr", "solver", "param", "final_rse", "iters", "seconds"]


def _bench_cells(cfg) -> list[dict]:
    grid = cfg.get("grid") or {}
    snrs = grid.get("snr_db", [cfg["snr_db"]])
    mrs = grid.get("missing_rate", [cfg["missing_rate"]])
    solvers = grid.get("solver", [cfg["solver"]])
    cells = []
    for solver in solvers:
        if solver == "opt":
            params = [("beta0", float(b)) for b in grid.get("beta0", [cfg["beta0"]])]
        else:
            params = [("init_rank", int(r)) for r in grid.get("init_rank", [cfg["max_rank"]])]
        for snr in snrs:
            for mr in mrs:
                for kind, value in params:
                    cells.append({"solver": solver, "snr": snr, "mr": float(mr), "kind": kind, "param": value})
    return cells


def _bench_task(task) -> dict:
    cfg, cell, trial = task
    syn = cfg.get("synthetic") or {}
    shape = tuple(syn.get("shape", (20, 20, 20, 20)))
    true_ranks = syn.get("ranks", [1] + [5] * (len(shape) - 1) + [1])
    prob = synthetic_problem(shape, true_ranks, cell["snr"], cell["mr"], cfg["seed"], trial,
                             noise_var=cfg.get("noise_var"))
    kw = _solve_kwargs(cfg)
    if cell["kind"] == "beta0":
        kw["beta0"] = cell["param"]
        ranks = _ranks_for(cfg, shape)
    else:
        ranks = [1] + [cell["param"]] * (len(shape) - 1) + [1]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SingularSystemWarning)
        outcome = solve(cell["solver"], prob.observed, prob.mask, ranks, seed=prob.seeds["init"], **kw)
    return {"trial": trial, "snr": cell["snr"], "mr": cell["mr"], "solver": cell["solver"],
            "param": cell["param"], "final_rse": outcome.rse(prob.truth), "iters": outcome.iters,
            "seconds": outcome.seconds}


def worker_count() -> int:
    raw = os.environ.get("GRAPHTT_THREADS", "1")
    try:
        n = int(raw)
    except ValueError as exc:
        raise JobError(f"GRAPHTT_THREADS must be an integer, got {raw!r}") from exc
    return max(1, min(n, os.cpu_count() or 1))


def cmd_synth_bench(cfg) -> int:
    out = prepare_out(cfg)
    trials = int(cfg.get("trials", 1))
    cells = _bench_cells(cfg)
    tasks = [(cfg, cell, t) for cell in cells for t in range(trials)]
    log.info("synth-bench: %d cells x %d trials", len(cells), trials)
    rows = []
    workers = worker_count()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            rows = list(ex.map(_bench_task, tasks))
    else:
        for i, task in enumerate(tasks, 1):
            rows.append(_bench_task(task))
            r = rows[-1]
            log.info("[%d/%d] %s %s=%s snr=%s mr=%g trial=%d rse=%.4g", i, len(tasks), r["solver"],
                     task[1]["kind"], r["param"], r["snr"], r["mr"], r["trial"], r["final_rse"])
    rows.sort(key=lambda r: (r["solver"], str(r["snr"]), r["mr"], r["param"], r["trial"]))
    with open(out / "bench.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(BENCH_COLUMNS)
        for r in rows:
            w.writerow([r["trial"], r["snr"], r["mr"], r["solver"], r["param"], repr(r["final_rse"]),
                        r["iters"], f"{r['seconds']:.3f}"])
    return 0


# ------------------------------------------------------------------ compare-updates


def cmd_compare_updates(cfg) -> int:
    syn = cfg.get("synthetic") or {}
    shape = tuple(syn.get("shape", (20, 20, 20, 20)))
    true_ranks = syn.get("ranks", [1] + [5] * (len(shape) - 1) + [1])
    ranks = _ranks_for(cfg, shape)
    cap = int((cfg.get("opt") or {}).get("core_cap", DEFAULT_CORE_CAP))
    for d in range(len(shape)):
        n = core_system_dim(shape, ranks, d)
        if n > cap:
            raise JobError(f"core update of mode {d} needs a {n}x{n} system "
                           f"(J_d*R_d*R_d+1 = {shape[d]}*{ranks[d]}*{ranks[d + 1]}), above the cap {cap}")
    out = prepare_out(cfg)
    prob = synthetic_problem(shape, true_ranks, cfg["snr_db"], float(cfg["missing_rate"]), cfg["seed"], 0,
                             noise_var=cfg.get("noise_var"))
    tt0 = init_tt(prob.observed, prob.mask, ranks, prob.seeds["init"])
    laps = default_laplacians(shape, (cfg.get("graph") or {}).get("kinds"),
                              float((cfg.get("graph") or {}).get("alpha", 1.0)))
    opt_kw = {k: v for k, v in (cfg.get("opt") or {}).items() if k not in ("update", "core_cap")}
    if cfg.get("max_iters") is not None:
        opt_kw["max_sweeps"] = int(cfg["max_iters"])
    rows = []
    for kind in ("fiber", "core"):
        conf = OptConfig(ranks, beta0=float(cfg["beta0"]), laplacians=laps, update=kind, core_cap=cap, **opt_kw)
        log.info("compare-updates: running %s update", kind)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", SingularSystemWarning)
            res = run_graphtt_opt(prob.observed, prob.mask, conf, reference=prob.truth, init=tt0)
        for i, (f, r, s) in enumerate(zip(res.objective_trace, res.rse_trace, res.seconds)):
            rows.append([kind, i, repr(f), repr(r), f"{s:.6f}"])
        log.info("compare-updates: %s final rse %.4g, %.3fs/sweep, largest system %d", kind,
                 res.rse_trace[-1], res.seconds[-1] / max(res.sweeps, 1), res.max_system_dim)
    with open(out / "compare_updates.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["update", "sweep", "objective", "rse", "seconds"])
        w.writerows(rows)
    return 0


# ------------------------------------------------------------------ metrics


def cmd_metrics(cfg) -> int:
    if not cfg.get("reference") or not cfg.get("estimate"):
        raise JobError("metrics needs --reference and --estimate")
    X, is_image = _read_array(cfg["reference"])
    Xhat, _ = _read_array(cfg["estimate"])
    if X.shape != Xhat.shape:
        raise JobError(f"shape mismatch: {X.shape} vs {Xhat.shape}")
    out = prepare_out(cfg)
    q = _image_ssim(X, Xhat) if is_image else float("nan")
    _write_metrics(out / "metrics.csv", [(Path(cfg["estimate"]).stem, rse(X, Xhat), psnr(X, Xhat), q)])
    return 0


COMMANDS = {
    "complete": cmd_complete,
    "synth-bench": cmd_synth_bench,
    "compare-updates": cmd_compare_updates,
    "metrics": cmd_metrics,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML file with job settings")
    common.add_argument("--solver", choices=SOLVERS)
    common.add_argument("--beta0", type=float)
    common.add_argument("--ranks", type=parse_ranks, help="comma-separated TT ranks, e.g. 1,10,10,1")
    common.add_argument("--missing-rate", type=float, dest="missing_rate")
    common.add_argument("--snr-db", type=float, dest="snr_db")
    common.add_argument("--noise-var", type=float, dest="noise_var")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--max-iters", type=int, dest="max_iters")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="graphtt", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("complete", parents=[common], help="complete a tensor or image")
    p.add_argument("--input", help="PNG image or GTT1 tensor")
    p.add_argument("--mask", help="stencil PNG or GTT1 0/1 tensor; overrides --missing-rate")
    sub.add_parser("synth-bench", parents=[common], help="Monte-Carlo runs on synthetic TT data")
    sub.add_parser("compare-updates", parents=[common], help="fiber vs whole-core updates")
    p = sub.add_parser("metrics", parents=[common], help="RSE / PSNR / SSIM of an estimate")
    p.add_argument("--reference", required=False)
    p.add_argument("--estimate", required=False)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        cfg = effective_config(args)
        return COMMANDS[args.command](cfg)
    except JobError as exc:
        print(f"graphtt {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
