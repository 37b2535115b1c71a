"""Reconstruction quality: RSE, PSNR, SSIM, and [0, 1] normalization."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_SIGMA = 1.5
SSIM_WIN = 11


def rse(X, Xhat) -> float:
    """Relative square error ``||X - Xhat||_F / ||X||_F``."""
    X = np.asarray(X, dtype=float)
    ref = np.linalg.norm(X)
    if ref == 0:
        raise ValueError("RSE is undefined for an all-zero reference")
    return float(np.linalg.norm(X - np.asarray(Xhat, dtype=float)) / ref)


def psnr(X, Xhat) -> float:
    """``20 log10 max(X) - 10 log10 MSE``; ``inf`` for identical inputs."""
    X = np.asarray(X, dtype=float)
    mse = float(np.mean((X - np.asarray(Xhat, dtype=float)) ** 2))
    if mse == 0:
        return float("inf")
    return float(20.0 * np.log10(X.max()) - 10.0 * np.log10(mse))


def ssim(img, img_hat) -> float:
    """Single-scale SSIM with an 11x11 Gaussian window (sigma 1.5), data range 1.

    3-D inputs are treated as ``(H, W, C)`` and averaged over channels.
    """
    from skimage.metrics import structural_similarity

    img = np.asarray(img, dtype=float)
    img_hat = np.asarray(img_hat, dtype=float)
    if img.shape != img_hat.shape:
        raise ValueError("images must have the same shape")
    if img.ndim not in (2, 3):
        raise ValueError("SSIM expects a 2-D image or an (H, W, C) stack")
    if min(img.shape[:2]) < SSIM_WIN:
        raise ValueError(f"images must be at least {SSIM_WIN}x{SSIM_WIN}")
    return float(structural_similarity(
        img, img_hat,
        data_range=1.0,
        gaussian_weights=True,
        sigma=SSIM_SIGMA,
        use_sample_covariance=False,
        K1=SSIM_K1,
        K2=SSIM_K2,
        channel_axis=2 if img.ndim == 3 else None,
    ))


@dataclass(frozen=True)
class Scale:
    lo: float
    hi: float

    def inverse(self, Z) -> np.ndarray:
        return np.asarray(Z, dtype=float) * (self.hi - self.lo) + self.lo


def normalize_unit(X) -> tuple[np.ndarray, Scale]:
    X = np.asarray(X, dtype=float)
    lo, hi = float(X.min()), float(X.max())
    if not hi > lo:
        raise ValueError("cannot normalize a constant tensor")
    return (X - lo) / (hi - lo), Scale(lo, hi)
