"""Binary tensor / TT files and 8-bit PNG helpers.

Tensor file (``GTT1``)::

    b"GTT1" | u32 D | D x u32 dims | little-endian f64 values, first index fastest

TT file (``GTTC``)::

    b"GTTC" | u32 D | (D+1) x u32 ranks | D x u32 dims |
    cores in order, each as f64 in (r_d fastest, r_{d+1}, j_d) layout

All integers are little-endian.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .tensor import TensorTrain

TENSOR_MAGIC = b"GTT1"
TT_MAGIC = b"GTTC"


class FormatError(ValueError):
    pass


def _read_u32s(buf: bytes, offset: int, n: int) -> tuple[list[int], int]:
    end = offset + 4 * n
    if len(buf) < end:
        raise FormatError("truncated header")
    return list(struct.unpack(f"<{n}I", buf[offset:end])), end


def tensor_to_bytes(t: np.ndarray) -> bytes:
    t = np.asarray(t, dtype="<f8")
    head = TENSOR_MAGIC + struct.pack(f"<I{t.ndim}I", t.ndim, *t.shape)
    return head + t.ravel(order="F").tobytes()


def tensor_from_bytes(buf: bytes) -> np.ndarray:
    if buf[:4] != TENSOR_MAGIC:
        raise FormatError("not a GTT1 tensor file")
    (D,), off = _read_u32s(buf, 4, 1)
    dims, off = _read_u32s(buf, off, D)
    n = int(np.prod(dims, dtype=np.int64))
    if len(buf) != off + 8 * n:
        raise FormatError(f"expected {n} values, file holds {(len(buf) - off) / 8:g}")
    vals = np.frombuffer(buf, dtype="<f8", offset=off, count=n)
    return vals.reshape(dims, order="F").astype(float)


def save_tensor(path, t: np.ndarray) -> None:
    Path(path).write_bytes(tensor_to_bytes(t))


def load_tensor(path) -> np.ndarray:
    return tensor_from_bytes(Path(path).read_bytes())


def tt_to_bytes(tt: TensorTrain) -> bytes:
    D = tt.ndim
    parts = [TT_MAGIC, struct.pack(f"<I{D + 1}I{D}I", D, *tt.ranks, *tt.shape)]
    for core in tt.cores:
        parts.append(np.asarray(core, dtype="<f8").ravel(order="F").tobytes())
    return b"".join(parts)


def tt_from_bytes(buf: bytes) -> TensorTrain:
    if buf[:4] != TT_MAGIC:
        raise FormatError("not a GTTC tensor-train file")
    (D,), off = _read_u32s(buf, 4, 1)
    ranks, off = _read_u32s(buf, off, D + 1)
    dims, off = _read_u32s(buf, off, D)
    cores = []
    for d in range(D):
        shape = (ranks[d], ranks[d + 1], dims[d])
        n = int(np.prod(shape))
        if len(buf) < off + 8 * n:
            raise FormatError(f"truncated core {d}")
        vals = np.frombuffer(buf, dtype="<f8", offset=off, count=n)
        cores.append(vals.reshape(shape, order="F").astype(float))
        off += 8 * n
    if off != len(buf):
        raise FormatError("trailing bytes after last core")
    return TensorTrain(cores)


def save_tt(path, tt: TensorTrain) -> None:
    Path(path).write_bytes(tt_to_bytes(tt))


def load_tt(path) -> TensorTrain:
    return tt_from_bytes(Path(path).read_bytes())


def load_png(path) -> np.ndarray:
    """Read an 8-bit PNG as floats in [0, 1]; shape (H, W) or (H, W, C)."""
    from PIL import Image

    with Image.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB")
        return np.asarray(im, dtype=float) / 255.0


def save_png(path, img: np.ndarray) -> None:
    """Write a [0, 1] image as 8-bit PNG (round to nearest, clamp)."""
    from PIL import Image

    arr = np.clip(np.rint(np.asarray(img, dtype=float) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path)


def load_stencil(path) -> np.ndarray:
    """Boolean stencil from a PNG: pixels brighter than mid-grey are observed."""
    img = load_png(path)
    if img.ndim == 3:
        img = img.mean(axis=2)
    return img >= 0.5


def save_stencil(path, stencil: np.ndarray) -> None:
    save_png(path, np.asarray(stencil, dtype=float))


def load_weight_csv(path) -> np.ndarray:
    """Dense weight matrix from CSV (comma separated, no header)."""
    return np.loadtxt(path, delimiter=",", ndmin=2)
