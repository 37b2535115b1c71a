"""Dense tensors, mode unfoldings and the tensor-train format.

Index conventions
-----------------
Modes are numbered from 0.  A tensor is a plain ``numpy.ndarray``; whenever a
linear layout matters (unfoldings, file I/O) the *first index varies fastest*.

A TT core ``G`` of mode ``d`` has shape ``(R_d, R_{d+1}, J_d)`` so that the
entry ``X[j_0, ..., j_{D-1}]`` equals ``G_0[:, :, j_0] @ ... @ G_{D-1}[:, :, j_{D-1}]``.
The mode-3 unfolding of a core is the ``J_d x (R_d R_{d+1})`` matrix whose
column ``p = r_{d+1} * R_d + r_d`` holds the fiber ``G[r_d, r_{d+1}, :]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def _check_mode(ndim: int, d: int) -> None:
    if not 0 <= d < ndim:
        raise ValueError(f"mode {d} out of range for a tensor of order {ndim}")


def matricize(t: np.ndarray, d: int) -> np.ndarray:
    """Mode-``d`` unfolding, shape ``(J_d, prod_{k != d} J_k)``.

    Columns enumerate the remaining indices with the lowest mode fastest.
    """
    t = np.asarray(t)
    _check_mode(t.ndim, d)
    return np.moveaxis(t, d, 0).reshape(t.shape[d], -1, order="F")


def tensorize(m: np.ndarray, d: int, shape) -> np.ndarray:
    """Inverse of :func:`matricize`."""
    shape = tuple(int(s) for s in shape)
    _check_mode(len(shape), d)
    m = np.asarray(m)
    rest = shape[:d] + shape[d + 1:]
    expected = (shape[d], int(np.prod(rest, dtype=np.int64)))
    if m.shape != expected:
        raise ValueError(f"matrix of shape {m.shape} cannot be folded into {shape} "
                         f"along mode {d} (expected {expected})")
    return np.moveaxis(m.reshape((shape[d],) + rest, order="F"), 0, d)


@dataclass
class TensorTrain:
    """A tensor in TT format: an ordered list of 3-way cores."""

    cores: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        self.cores = [np.asarray(c, dtype=float) for c in self.cores]
        if not self.cores:
            raise ValueError("a tensor train needs at least one core")
        for d, c in enumerate(self.cores):
            if c.ndim != 3:
                raise ValueError(f"core {d} must be 3-way, got shape {c.shape}")
        if self.cores[0].shape[0] != 1 or self.cores[-1].shape[1] != 1:
            raise ValueError("boundary TT ranks must be 1")
        for d in range(len(self.cores) - 1):
            if self.cores[d].shape[1] != self.cores[d + 1].shape[0]:
                raise ValueError(f"rank mismatch between cores {d} and {d + 1}")

    @property
    def ndim(self) -> int:
        return len(self.cores)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(c.shape[2] for c in self.cores)

    @property
    def ranks(self) -> list[int]:
        return [c.shape[0] for c in self.cores] + [1]

    def copy(self) -> "TensorTrain":
        return TensorTrain([c.copy() for c in self.cores])

    def full(self) -> np.ndarray:
        return tt_reconstruct(self)

    def __getitem__(self, index) -> float:
        return tt_entry(self, index)


def unfold_core(core: np.ndarray) -> np.ndarray:
    """Mode-3 unfolding ``J x (R_d R_{d+1})`` of a core."""
    r0, r1, j = core.shape
    return core.reshape(r0 * r1, j, order="F").T


def fold_core(g3: np.ndarray, r0: int, r1: int) -> np.ndarray:
    """Inverse of :func:`unfold_core`."""
    return np.asarray(g3).T.reshape(r0, r1, -1, order="F")


def tt_entry(tt: TensorTrain, index) -> float:
    index = tuple(int(i) for i in index)
    if len(index) != tt.ndim:
        raise ValueError(f"index has {len(index)} entries, tensor has order {tt.ndim}")
    v = np.ones((1, 1))
    for core, j in zip(tt.cores, index):
        if not 0 <= j < core.shape[2]:
            raise IndexError(f"index {j} out of range for mode of size {core.shape[2]}")
        v = v @ core[:, :, j]
    return float(v[0, 0])


def tt_reconstruct(tt: TensorTrain) -> np.ndarray:
    """Contract all cores into the dense tensor."""
    out = tt.cores[0][0].T  # (J_0, R_1)
    for core in tt.cores[1:]:
        out = np.tensordot(out, core, axes=([-1], [0]))  # (..., R, J)
        out = np.moveaxis(out, -1, -2)
    return out[..., 0]


def left_subchain(tt: TensorTrain, d: int) -> np.ndarray:
    """``(J_0 ... J_{d-1}) x R_d`` matrix of left partial products (rows first-index fastest)."""
    _check_mode(tt.ndim, d)
    left = np.ones((1, 1))
    for k in range(d):
        core = tt.cores[k]
        # previous rows fastest, j_k slowest
        left = np.einsum("ar,rsj->jas", left, core).reshape(-1, core.shape[1])
    return left


def right_subchain(tt: TensorTrain, d: int) -> np.ndarray:
    """``R_{d+1} x (J_{d+1} ... J_{D-1})`` matrix of right partial products."""
    _check_mode(tt.ndim, d)
    right = np.ones((1, 1))
    for k in range(tt.ndim - 1, d, -1):
        core = tt.cores[k]
        # column index: j_k fastest, then the already-contracted modes
        right = np.einsum("rsj,sb->rbj", core, right).reshape(core.shape[0], -1)
    return right


def subchains(tt: TensorTrain, d: int) -> tuple[np.ndarray, np.ndarray]:
    """Left and right subchain matrices around mode ``d``.

    ``matricize(tt_reconstruct(tt), d) == unfold_core(G_d) @ np.kron(right, left.T)``.
    """
    return left_subchain(tt, d), right_subchain(tt, d)


def tt_svd(t: np.ndarray, max_ranks) -> TensorTrain:
    """Left-to-right sequential truncated SVD.

    ``max_ranks`` has ``D + 1`` entries with both boundary values equal to 1.
    """
    t = np.asarray(t, dtype=float)
    D = t.ndim
    max_ranks = [int(r) for r in max_ranks]
    if len(max_ranks) != D + 1:
        raise ValueError(f"need {D + 1} ranks for an order-{D} tensor, got {len(max_ranks)}")
    if any(r < 1 for r in max_ranks):
        raise ValueError("TT ranks must be positive")
    if max_ranks[0] != 1 or max_ranks[-1] != 1:
        raise ValueError("boundary TT ranks must be 1")

    cores = []
    r_prev = 1
    # C-order working matrix: rows (r_prev, j_d) with j_d fastest
    c = t.reshape(1, -1)
    for d in range(D - 1):
        c = c.reshape(r_prev * t.shape[d], -1)
        u, s, vt = np.linalg.svd(c, full_matrices=False)
        r = max(1, min(max_ranks[d + 1], s.size))
        # a zero tail carries no information; keep the cores exactly zero there
        u[:, :r][:, s[:r] == 0] = 0.0
        cores.append(u[:, :r].reshape(r_prev, t.shape[d], r).transpose(0, 2, 1))
        c = s[:r, None] * vt[:r]
        r_prev = r
    cores.append(c.reshape(r_prev, t.shape[-1], 1).transpose(0, 2, 1))
    return TensorTrain(cores)


def balance_cores(tt: TensorTrain) -> TensorTrain:
    """Rescale cores to equal Frobenius norm without changing the represented tensor."""
    norms = np.array([np.linalg.norm(c) for c in tt.cores])
    if np.any(norms == 0):
        return tt.copy()
    target = np.exp(np.mean(np.log(norms)))
    return TensorTrain([c * (target / n) for c, n in zip(tt.cores, norms)])


def tt_param_count(shape, ranks) -> int:
    """Number of stored TT-core entries, ``sum_d J_d R_d R_{d+1}``."""
    shape = [int(s) for s in shape]
    ranks = [int(r) for r in ranks]
    if len(ranks) != len(shape) + 1:
        raise ValueError(f"{len(shape)} dimensions need {len(shape) + 1} ranks, got {len(ranks)}")
    return sum(j * r0 * r1 for j, r0, r1 in zip(shape, ranks[:-1], ranks[1:]))


def capped_ranks(shape, max_rank: int) -> list[int]:
    """Ranks ``min(prod of prefix dims, prod of suffix dims, max_rank)``, boundaries 1."""
    shape = [int(s) for s in shape]
    ranks = [1]
    for d in range(1, len(shape)):
        prefix = int(np.prod(shape[:d], dtype=object))
        suffix = int(np.prod(shape[d:], dtype=object))
        ranks.append(min(prefix, suffix, int(max_rank)))
    ranks.append(1)
    return ranks


def symmetric_gauge(tt: TensorTrain, floor: float = 1e-12) -> TensorTrain:
    """Regauge so each rank index carries the square root of its singular value on both sides.

    A right-to-left SVD sweep gives the singular values ``s_b`` of every
    boundary; core ``d`` becomes ``diag(s_d)^{1/2} B_d diag(s_{d+1})^{-1/2}``
    with ``B_d`` right-orthonormal. Weak directions therefore look weak from
    both neighboring cores. Singular values below ``floor`` times the largest
    are clipped before inversion.
    """
    cores = [np.array(c, dtype=float) for c in left_orthogonalize(tt).cores]
    D = len(cores)
    svals = [np.ones(1)] * (D + 1)
    for d in range(D - 1, 0, -1):
        R0, R1, J = cores[d].shape
        u, s, vt = np.linalg.svd(cores[d].reshape(R0, R1 * J), full_matrices=False)
        r = s.size
        cores[d] = vt.reshape(r, R1, J)
        cores[d - 1] = np.einsum("abj,bc->acj", cores[d - 1], u * s)
        svals[d] = s
    out = []
    for d in range(D):
        lo = np.sqrt(svals[d])
        hi = np.sqrt(np.maximum(svals[d + 1], floor * max(svals[d + 1].max(), np.finfo(float).tiny)))
        c = cores[d]
        if d > 0:
            c = c * lo[:, None, None]
        out.append(c / hi[None, :, None] if d < D - 1 else c)
    return TensorTrain(out)


def left_orthogonalize(tt: TensorTrain) -> TensorTrain:
    """QR sweep making cores ``0..D-2`` left-orthonormal; the norm moves to the last core."""
    cores = [np.array(c, dtype=float) for c in tt.cores]
    for d in range(len(cores) - 1):
        R0, R1, J = cores[d].shape
        mat = cores[d].transpose(0, 2, 1).reshape(R0 * J, R1)
        q, r = np.linalg.qr(mat)
        k = q.shape[1]
        cores[d] = q.reshape(R0, J, k).transpose(0, 2, 1)
        cores[d + 1] = np.einsum("ab,bcj->acj", r, cores[d + 1])
    return TensorTrain(cores)
