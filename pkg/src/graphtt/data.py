"""Synthetic TT data, observation masks and noise."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import TensorTrain, fold_core, tt_reconstruct


@dataclass(frozen=True)
class ObservationMask:
    """Boolean indicator tensor of observed entries."""

    indicator: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "indicator", np.asarray(self.indicator, dtype=bool))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.indicator.shape

    @property
    def count(self) -> int:
        return int(self.indicator.sum())

    def __and__(self, other: "ObservationMask") -> "ObservationMask":
        return ObservationMask(self.indicator & other.indicator)

    def __eq__(self, other) -> bool:
        return isinstance(other, ObservationMask) and np.array_equal(self.indicator, other.indicator)

    __hash__ = None

    @classmethod
    def full(cls, shape) -> "ObservationMask":
        return cls(np.ones(shape, dtype=bool))


def as_mask(mask) -> ObservationMask:
    return mask if isinstance(mask, ObservationMask) else ObservationMask(mask)


def _check_rate(name: str, value: float) -> None:
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {value}")


def random_mask(shape, missing_rate: float, seed) -> ObservationMask:
    """Each entry observed independently with probability ``1 - missing_rate``."""
    _check_rate("missing_rate", missing_rate)
    rng = np.random.default_rng(seed)
    return ObservationMask(rng.random(tuple(shape)) >= missing_rate)


def slice_mask(shape, mode: int, fraction: float, seed) -> ObservationMask:
    """Remove ``floor(fraction * J_mode)`` whole hyperslabs of ``mode``, chosen uniformly."""
    _check_rate("fraction", fraction)
    shape = tuple(shape)
    n = shape[mode]
    rng = np.random.default_rng(seed)
    drop = rng.choice(n, size=int(np.floor(fraction * n)), replace=False)
    keep = np.ones(n, dtype=bool)
    keep[drop] = False
    view = [1] * len(shape)
    view[mode] = n
    return ObservationMask(np.broadcast_to(keep.reshape(view), shape).copy())


def stencil_mask(shape, stencil) -> ObservationMask:
    """Broadcast a 2-D stencil over the first two modes to every remaining index."""
    shape = tuple(shape)
    stencil = np.asarray(stencil, dtype=bool)
    if stencil.shape != shape[:2]:
        raise ValueError(f"stencil of shape {stencil.shape} does not match {shape[:2]}")
    view = stencil.shape + (1,) * (len(shape) - 2)
    return ObservationMask(np.broadcast_to(stencil.reshape(view), shape).copy())


def snr_to_sigma2(X, snr_db: float) -> float:
    X = np.asarray(X, dtype=float)
    return float(np.sum(X ** 2) / (X.size * 10.0 ** (snr_db / 10.0)))


def measured_snr_db(X, noisy) -> float:
    X = np.asarray(X, dtype=float)
    return float(10.0 * np.log10(np.sum(X ** 2) / np.sum((np.asarray(noisy) - X) ** 2)))


def add_noise(X, sigma2: float, seed) -> np.ndarray:
    if sigma2 < 0:
        raise ValueError("noise variance must be nonnegative")
    X = np.asarray(X, dtype=float)
    if sigma2 == 0:
        return X.copy()
    rng = np.random.default_rng(seed)
    return X + rng.normal(scale=np.sqrt(sigma2), size=X.shape)


def smooth_covariance(n: int, length: float = 5.0) -> np.ndarray:
    """``exp(-|i - j|^2 / length)``."""
    idx = np.arange(n)
    return np.exp(-((idx[:, None] - idx[None, :]) ** 2) / length)


@dataclass
class SyntheticSpec:
    shape: tuple
    ranks: list
    seed: int = 0
    covariances: list | None = field(default=None)

    def covariance(self, d: int) -> np.ndarray:
        if self.covariances is not None:
            return np.asarray(self.covariances[d], dtype=float)
        return smooth_covariance(int(self.shape[d]))


def _psd_sqrt(S: np.ndarray) -> np.ndarray:
    if not np.allclose(S, S.T, atol=1e-12):
        raise ValueError("fiber covariance must be symmetric")
    w, V = np.linalg.eigh(S)
    if w.min() < -1e-10 * max(1.0, w.max()):
        raise ValueError("fiber covariance is not positive semidefinite")
    return V * np.sqrt(np.clip(w, 0.0, None))


def gen_synthetic_tt(spec: SyntheticSpec) -> tuple[np.ndarray, TensorTrain]:
    """Cores whose mode-3 unfolded columns are i.i.d. ``N(0, Sigma_d)``."""
    shape = [int(s) for s in spec.shape]
    ranks = [int(r) for r in spec.ranks]
    if len(ranks) != len(shape) + 1 or ranks[0] != 1 or ranks[-1] != 1:
        raise ValueError("ranks must have D+1 entries with unit boundaries")
    rng = np.random.default_rng(spec.seed)
    cores = []
    for d, n in enumerate(shape):
        root = _psd_sqrt(spec.covariance(d))
        g3 = root @ rng.standard_normal((n, ranks[d] * ranks[d + 1]))
        cores.append(fold_core(g3, ranks[d], ranks[d + 1]))
    tt = TensorTrain(cores)
    return tt_reconstruct(tt), tt


def gaussian_fill(Y, mask, rng) -> np.ndarray:
    """Replace unobserved entries by i.i.d. draws matching the observed mean and variance."""
    Y = np.asarray(Y, dtype=float)
    O = as_mask(mask).indicator
    filled = np.where(O, Y, 0.0)
    if O.any():
        mu, sd = Y[O].mean(), Y[O].std()
    else:
        mu, sd = 0.0, 1.0
    missing = ~O
    filled[missing] = rng.normal(mu, sd, size=int(missing.sum()))
    return filled
