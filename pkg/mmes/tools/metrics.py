"""MMES Image Quality Metrics - PSNR, SSIM and noise-impedance helpers"""
import logging
import math
from typing import Iterable, Optional

import numpy as np
from scipy import signal

from mmes.utils import ShapeError, TensorValueError

logger = logging.getLogger('mmes')

SSIM_WINDOW = 11
SSIM_STD = 1.5


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """
    Peak signal-to-noise ratio 10·log10(peak²/MSE) in decibels.

    Returns:
        math.inf when the inputs are identical.
    """
    if a.shape != b.shape:
        raise ShapeError(f"PSNR of shapes {a.shape} and {b.shape}")
    if peak <= 0:
        raise TensorValueError(f"peak must be positive, got {peak}")
    mse = float(np.mean((np.asarray(a, dtype=np.float64) - b) ** 2))
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def gaussian_window(size: int = SSIM_WINDOW, std: float = SSIM_STD) -> np.ndarray:
    """Normalized 2-D Gaussian window used by SSIM."""
    k = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(k ** 2) / (2.0 * std ** 2))
    g /= g.sum()
    return np.outer(g, g)


def _ssim_channel(a: np.ndarray, b: np.ndarray, window: np.ndarray, c1: float, c2: float) -> float:
    def filt(img):
        return signal.correlate(img, window, mode='valid', method='direct')

    mu1, mu2 = filt(a), filt(b)
    s11 = filt(a * a) - mu1 * mu1
    s22 = filt(b * b) - mu2 * mu2
    s12 = filt(a * b) - mu1 * mu2
    num = (2 * mu1 * mu2 + c1) * (2 * s12 + c2)
    den = (mu1 * mu1 + mu2 * mu2 + c1) * (s11 + s22 + c2)
    return float(np.mean(num / den))


def ssim(a: np.ndarray, b: np.ndarray, data_range: float = 1.0) -> float:
    """
    Structural similarity with an 11×11 Gaussian window (σ=1.5), averaged over valid windows.

    Multi-channel (H, W, C) inputs score the mean of the per-channel values.
    """
    if a.shape != b.shape:
        raise ShapeError(f"SSIM of shapes {a.shape} and {b.shape}")
    if a.ndim not in (2, 3):
        raise ShapeError(f"SSIM needs a 2-D or (H, W, C) image, got shape {a.shape}")
    if min(a.shape[:2]) < SSIM_WINDOW:
        raise ShapeError(f"image {a.shape[:2]} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    window = gaussian_window()
    if a.ndim == 2:
        return _ssim_channel(a, b, window, c1, c2)
    return float(np.mean([_ssim_channel(a[..., c], b[..., c], window, c1, c2) for c in range(a.shape[2])]))


def shuffle_pixels(image: np.ndarray, seed: int) -> np.ndarray:
    """Randomly permute pixel positions; channels of a pixel stay together."""
    rng = np.random.default_rng(seed)
    h, w = image.shape[:2]
    flat = image.reshape(h * w, -1)
    return flat[rng.permutation(h * w)].reshape(image.shape)


def uniform_noise_like(image: np.ndarray, seed: int) -> np.ndarray:
    """Uniform [0, 1) noise image of the same shape."""
    return np.random.default_rng(seed).uniform(0.0, 1.0, size=image.shape)


def first_iter_below_mse(trace: Iterable, threshold: float, peak: float = 1.0) -> Optional[int]:
    """
    First traced iteration whose PSNR shows an MSE at or below threshold.

    Returns:
        The iteration number, or None if no traced PSNR reaches it.
    """
    target = 10.0 * math.log10(peak * peak / threshold)
    for record in trace:
        if record.psnr is not None and record.psnr >= target:
            return record.iter
    return None
