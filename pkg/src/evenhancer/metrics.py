"""Charbonnier loss and Y-channel PSNR / SSIM for frames in [0, 1]."""
from __future__ import annotations

import math

import numpy as np
from scipy.ndimage import correlate

from .tensor_core import ContractError

# BT.601 luma, full range
Y_COEFFS = (0.299, 0.587, 0.114)
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1, SSIM_K2 = 0.01, 0.03


def _check(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ContractError(f"shape mismatch: {pred.shape} vs {target.shape}")
    return pred, target


def charbonnier(pred, target, eps2: float = 1e-6) -> float:
    pred, target = _check(pred, target)
    return float(np.mean(np.sqrt((pred - target) ** 2 + eps2)))


def rgb_to_y(frame) -> np.ndarray:
    """Luma of a (3, H, W) frame."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 3 or frame.shape[0] != 3:
        raise ContractError(f"expected a (3, H, W) frame, got {frame.shape}")
    r, g, b = frame
    return Y_COEFFS[0] * r + Y_COEFFS[1] * g + Y_COEFFS[2] * b


def psnr_y(pred, target) -> float:
    """PSNR in dB on luma with peak 1; identical frames give ``math.inf``."""
    pred, target = _check(pred, target)
    mse = float(np.mean((rgb_to_y(pred) - rgb_to_y(target)) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2
    g = np.exp(-(ax**2) / (2 * sigma**2))
    win = np.outer(g, g)
    return win / win.sum()


def ssim_map(a, b) -> np.ndarray:
    """Per-pixel SSIM of two single-channel images, reflect-padded Gaussian statistics."""
    a, b = _check(a, b)
    win = gaussian_window()
    filt = lambda x: correlate(x, win, mode="reflect")  # noqa: E731
    c1, c2 = SSIM_K1**2, SSIM_K2**2
    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a**2
    var_b = filt(b * b) - mu_b**2
    cov = filt(a * b) - mu_a * mu_b
    return ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2))


def ssim_y(pred, target) -> float:
    pred, target = _check(pred, target)
    return float(ssim_map(rgb_to_y(pred), rgb_to_y(target)).mean())
