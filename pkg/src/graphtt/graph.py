"""Per-mode graph Laplacians encoding local similarity."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# weights below this are dropped to keep Laplacians numerically sparse
WEIGHT_FLOOR = 1e-12


@dataclass(frozen=True)
class GraphLaplacian:
    """Symmetric PSD matrix ``L = D - A`` or the identity for modes without graph information."""

    matrix: np.ndarray
    is_identity: bool = False

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    @classmethod
    def identity(cls, n: int) -> "GraphLaplacian":
        return cls(np.eye(n), is_identity=True)

    def quadratic_form(self, x) -> float:
        return quadratic_form(self, x)


@dataclass(frozen=True)
class WeightSpec:
    """How to build a mode's graph: ``kind`` is ``"exp_decay"`` or ``"identity"``."""

    kind: str
    size: int
    alpha: float = 1.0

    def __post_init__(self):
        if self.kind not in ("exp_decay", "identity"):
            raise ValueError(f"unknown graph kind {self.kind!r}")
        if self.size < 1:
            raise ValueError("graph size must be positive")
        if self.kind == "exp_decay" and not self.alpha > 0:
            raise ValueError("alpha must be positive for exp_decay weights")


def laplacian_from_weights(A) -> GraphLaplacian:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("weight matrix must be square")
    if not np.allclose(A, A.T, rtol=0, atol=1e-12):
        raise ValueError("weight matrix must be symmetric")
    if np.any(A < 0):
        raise ValueError("weights must be nonnegative")
    if np.any(np.diag(A) != 0):
        raise ValueError("weight matrix must have a zero diagonal")
    return GraphLaplacian(np.diag(A.sum(axis=1)) - A)


def build_weights(spec: WeightSpec):
    """Weight matrix for ``exp_decay``; ``None`` for ``identity`` (the Laplacian is I)."""
    if spec.kind == "identity":
        return None
    idx = np.arange(spec.size)
    A = np.exp(-spec.alpha * (idx[:, None] - idx[None, :]) ** 2.0)
    A[A < WEIGHT_FLOOR] = 0.0
    np.fill_diagonal(A, 0.0)
    return A


def build_laplacian(spec: WeightSpec) -> GraphLaplacian:
    if spec.kind == "identity":
        return GraphLaplacian.identity(spec.size)
    return laplacian_from_weights(build_weights(spec))


def quadratic_form(L: GraphLaplacian, x) -> float:
    x = np.asarray(x, dtype=float)
    if x.shape != (L.size,):
        raise ValueError(f"vector of length {x.size} does not match graph of size {L.size}")
    return float(x @ L.matrix @ x)


def default_laplacians(shape, kinds=None, alpha: float = 1.0) -> list[GraphLaplacian]:
    """One Laplacian per mode; ``kinds`` defaults to ``exp_decay`` everywhere."""
    kinds = kinds or ["exp_decay"] * len(shape)
    if len(kinds) != len(shape):
        raise ValueError("need one graph kind per mode")
    return [build_laplacian(WeightSpec(k, int(n), alpha)) for k, n in zip(kinds, shape)]
