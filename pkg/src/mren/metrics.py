"""PSNR and SSIM on the BT.601 luma plane with a ``scale``-pixel border shave."""

import numpy as np

from .data import rgb_to_y
from .errors import InputError, ShapeError

PSNR_CAP = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
K1, K2 = 0.01, 0.03
PEAK = 255.0


def _shaved_y(sr, hr, scale, min_side):
    sr, hr = np.asarray(sr), np.asarray(hr)
    if sr.shape != hr.shape:
        raise ShapeError(f"image dims differ: {sr.shape} vs {hr.shape}")
    h, w = hr.shape[:2]
    if h - 2 * scale < min_side or w - 2 * scale < min_side:
        raise InputError(f"image {w}x{h} too small for a {scale}-pixel shave leaving {min_side}x{min_side}")
    crop = (slice(scale, h - scale), slice(scale, w - scale)) if scale > 0 else (slice(None), slice(None))
    return rgb_to_y(sr)[crop], rgb_to_y(hr)[crop]


def psnr_y(sr, hr, scale):
    """PSNR in dB; identical inputs return ``PSNR_CAP``."""
    a, b = _shaved_y(sr, hr, scale, 1)
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return PSNR_CAP
    return float(min(PSNR_CAP, 10.0 * np.log10(PEAK**2 / mse)))


def gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    """Normalized 1-D Gaussian taps; the 2-D window is their outer product."""
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


def _filter_valid(img, taps):
    k = len(taps)
    rows = np.lib.stride_tricks.sliding_window_view(img, k, axis=0) @ taps
    return np.lib.stride_tricks.sliding_window_view(rows, k, axis=1) @ taps


def ssim_y(sr, hr, scale):
    """Mean SSIM over all valid 11x11 Gaussian windows."""
    a, b = _shaved_y(sr, hr, scale, SSIM_WINDOW)
    taps = gaussian_window()
    c1, c2 = (K1 * PEAK) ** 2, (K2 * PEAK) ** 2
    mu_a, mu_b = _filter_valid(a, taps), _filter_valid(b, taps)
    var_a = _filter_valid(a * a, taps) - mu_a * mu_a
    var_b = _filter_valid(b * b, taps) - mu_b * mu_b
    cov = _filter_valid(a * b, taps) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))
