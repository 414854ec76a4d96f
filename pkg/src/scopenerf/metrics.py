"""Image quality metrics over [0,1] float RGB buffers: PSNR and SSIM."""

from __future__ import annotations

import math

import numpy as np
from scipy.ndimage import gaussian_filter

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
PSNR_LOG_CAP = 99.0


def as_image(arr) -> np.ndarray:
    """Validate/coerce to an (H, W, 3) float64 buffer clamped to [0,1]."""
    a = np.asarray(arr, dtype=np.float64)
    if a.ndim != 3 or a.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) image, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("image contains non-finite values")
    return np.clip(a, 0.0, 1.0)


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB over unit-range images; +inf when identical."""
    a = as_image(a)
    b = as_image(b)
    if a.shape != b.shape:
        raise ValueError("psnr needs images of identical dimensions")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def psnr_capped(a, b) -> float:
    """PSNR with +inf mapped to the log-friendly cap, for tables and logs."""
    value = psnr(a, b)
    return min(value, PSNR_LOG_CAP)


def _ssim_channel(x: np.ndarray, y: np.ndarray) -> float:
    # gaussian window, truncated so the kernel spans exactly SSIM_WINDOW taps
    truncate = (SSIM_WINDOW - 1) // 2 / SSIM_SIGMA

    def g(img):
        return gaussian_filter(img, SSIM_SIGMA, truncate=truncate, mode="nearest")

    c1 = SSIM_K1 * SSIM_K1
    c2 = SSIM_K2 * SSIM_K2
    mu_x = g(x)
    mu_y = g(y)
    var_x = g(x * x) - mu_x * mu_x
    var_y = g(y * y) - mu_y * mu_y
    cov = g(x * y) - mu_x * mu_y
    s = ((2 * mu_x * mu_y + c1) * (2 * cov + c2)) \
        / ((mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2))
    pad = (SSIM_WINDOW - 1) // 2
    return float(np.mean(s[pad:-pad, pad:-pad]))


def ssim(a, b) -> float:
    """Mean structural similarity: 11x11 Gaussian window (sigma 1.5), unit dynamic range.

    Computed per channel and averaged; border pixels whose window leaves the
    image are excluded from the mean.
    """
    a = as_image(a)
    b = as_image(b)
    if a.shape != b.shape:
        raise ValueError("ssim needs images of identical dimensions")
    if min(a.shape[0], a.shape[1]) < SSIM_WINDOW:
        raise ValueError(f"ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} images")
    return float(np.mean([_ssim_channel(a[..., c], b[..., c]) for c in range(3)]))
