"""Reconstruction quality and size metrics."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.signal import convolve2d


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(getattr(a, "values", a), dtype=np.float64)
    b = np.asarray(getattr(b, "values", b), dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def mse(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.mean((a - b) ** 2))


def psnr(a, b, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` for identical inputs."""
    err = mse(a, b)
    if err == 0.0:
        return math.inf
    return float(10.0 * np.log10(peak**2 / err))


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    g /= g.sum()
    return np.outer(g, g)


def _ssim_2d(a: np.ndarray, b: np.ndarray, win: np.ndarray, c1: float, c2: float) -> float:
    def filt(x):
        return convolve2d(x, win, mode="valid")

    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a**2
    var_b = filt(b * b) - mu_b**2
    cov = filt(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def ssim(a, b, *, data_range: float = 1.0, k1: float = 0.01, k2: float = 0.03) -> float:
    """Single-scale SSIM with an 11x11 Gaussian window (sigma 1.5).

    Averaged over all fully contained windows.  3D inputs are scored slice by
    slice along the last axis and averaged.
    """
    a, b = _pair(a, b)
    win = gaussian_window()
    if a.ndim not in (2, 3) or min(a.shape[:2]) < win.shape[0]:
        raise ValueError(f"SSIM needs 2D/3D grids with sides >= {win.shape[0]}, got {a.shape}")
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    if a.ndim == 2:
        return _ssim_2d(a, b, win, c1, c2)
    return float(np.mean([_ssim_2d(a[..., i], b[..., i], win, c1, c2) for i in range(a.shape[-1])]))


def compression_ratio(dense_entries: int, params: int) -> float:
    if params < 1:
        raise ValueError("parameter count must be >= 1")
    return dense_entries / params


@dataclass
class MetricReport:
    psnr: float
    ssim: float
    mse: float
    params: int
    compression_ratio: float

    @classmethod
    def evaluate(cls, reference, reconstruction, params: int) -> "MetricReport":
        ref, rec = _pair(reference, reconstruction)
        return cls(
            psnr=psnr(ref, rec),
            ssim=ssim(ref, rec) if min(ref.shape) >= 11 and ref.ndim in (2, 3) else float("nan"),
            mse=mse(ref, rec),
            params=int(params),
            compression_ratio=compression_ratio(ref.size, params),
        )

    def as_dict(self) -> dict:
        return asdict(self)
