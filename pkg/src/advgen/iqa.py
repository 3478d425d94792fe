"""Full-reference image quality metrics on pixel-space images in [0, 1].

Images are H x W (grayscale) or H x W x C arrays; color metrics are computed
per channel and averaged. PSNR is reported both at the standard 10*log10
scale and at the doubled decibel convention used in the comparison tables
this toolkit reproduces.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import convolve2d

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

# Standard 5-scale weights; renormalized when fewer scales fit the image.
MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)


@dataclass(frozen=True)
class IQAResult:
    ssim: float
    ms_ssim: float
    psnr_standard_db: float
    psnr_doubled_db: float
    ms_ssim_scales: int = 5

    def __post_init__(self):
        if math.isfinite(self.psnr_standard_db):
            if abs(self.psnr_doubled_db - 2 * self.psnr_standard_db) > 1e-9:
                raise ValueError("doubled-dB PSNR must be exactly twice the standard value")


def psnr(a: np.ndarray, b: np.ndarray, max_val: float = 1.0) -> tuple[float, float]:
    """(standard dB, doubled dB). Identical inputs give +inf sentinels."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf, math.inf
    standard = 10.0 * math.log10(max_val**2 / mse)
    return standard, 2.0 * standard


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """Normalized 2-D gaussian weighting window."""
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-(ax**2) / (2 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def _channels(a: np.ndarray) -> list[np.ndarray]:
    if a.ndim == 2:
        return [a]
    if a.ndim == 3:
        return [a[:, :, c] for c in range(a.shape[2])]
    raise ValueError(f"expected H x W or H x W x C image, got shape {a.shape}")


def _check_pair(a, b, min_side):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if min(a.shape[0], a.shape[1]) < min_side:
        raise ValueError(
            f"image sides must be >= {min_side}px, got {a.shape[0]}x{a.shape[1]}"
        )
    return a, b


def _ssim_maps(x: np.ndarray, y: np.ndarray, max_val: float):
    """Per-window luminance and contrast-structure maps (valid convolution)."""
    w = gaussian_window()
    c1 = (SSIM_K1 * max_val) ** 2
    c2 = (SSIM_K2 * max_val) ** 2
    mu_x = convolve2d(x, w, mode="valid")
    mu_y = convolve2d(y, w, mode="valid")
    sxx = convolve2d(x * x, w, mode="valid") - mu_x**2
    syy = convolve2d(y * y, w, mode="valid") - mu_y**2
    sxy = convolve2d(x * y, w, mode="valid") - mu_x * mu_y
    lum = (2 * mu_x * mu_y + c1) / (mu_x**2 + mu_y**2 + c1)
    cs = (2 * sxy + c2) / (sxx + syy + c2)
    return lum, cs


def ssim(a: np.ndarray, b: np.ndarray, max_val: float = 1.0) -> float:
    """Mean structural similarity with an 11x11 gaussian window, per-channel averaged."""
    a, b = _check_pair(a, b, SSIM_WINDOW)
    values = []
    for x, y in zip(_channels(a), _channels(b)):
        lum, cs = _ssim_maps(x, y, max_val)
        values.append(float(np.mean(lum * cs)))
    return float(np.mean(values))


def downsample2(x: np.ndarray) -> np.ndarray:
    """2x2 average pooling with ceil-mode sizing (odd edges replicate)."""
    h, w = x.shape
    if h % 2:
        x = np.vstack([x, x[-1:, :]])
    if w % 2:
        x = np.hstack([x, x[:, -1:]])
    return (x[0::2, 0::2] + x[1::2, 0::2] + x[0::2, 1::2] + x[1::2, 1::2]) / 4.0


def ms_ssim_scale_count(height: int, width: int) -> int:
    """How many dyadic scales (max 5) keep the smaller side >= the SSIM window."""
    side = min(height, width)
    count = 0
    while side >= SSIM_WINDOW and count < len(MS_SSIM_WEIGHTS):
        count += 1
        side = math.ceil(side / 2)
    return count


def ms_ssim(a: np.ndarray, b: np.ndarray, max_val: float = 1.0, scales: int | None = None) -> float:
    """Multi-scale SSIM; the scale count adapts to the image size.

    Contrast-structure means are clamped at 0 before the weighted geometric
    product; weights renormalize over the scales in use.
    """
    a, b = _check_pair(a, b, SSIM_WINDOW)
    available = ms_ssim_scale_count(a.shape[0], a.shape[1])
    if available == 0:
        raise ValueError(
            f"image sides must be >= {SSIM_WINDOW}px, got {a.shape[0]}x{a.shape[1]}"
        )
    if scales is None:
        scales = available
    elif scales > available:
        raise ValueError(f"{scales} scales requested but only {available} fit the image")
    weights = np.array(MS_SSIM_WEIGHTS[:scales], dtype=np.float64)
    weights /= weights.sum()

    values = []
    for x, y in zip(_channels(a), _channels(b)):
        result = 1.0
        for level in range(scales):
            lum, cs = _ssim_maps(x, y, max_val)
            if level == scales - 1:
                result *= max(float(np.mean(lum * cs)), 0.0) ** weights[level]
            else:
                result *= max(float(np.mean(cs)), 0.0) ** weights[level]
                x, y = downsample2(x), downsample2(y)
        values.append(result)
    return float(np.mean(values))


def assess_pair(a: np.ndarray, b: np.ndarray, max_val: float = 1.0) -> IQAResult:
    """All quality metrics for one clean/perturbed pixel-space pair."""
    a = np.asarray(a, dtype=np.float64)
    standard, doubled = psnr(a, b, max_val)
    scales = ms_ssim_scale_count(a.shape[0], a.shape[1])
    return IQAResult(
        ssim=ssim(a, b, max_val),
        ms_ssim=ms_ssim(a, b, max_val),
        psnr_standard_db=standard,
        psnr_doubled_db=doubled,
        ms_ssim_scales=scales,
    )
