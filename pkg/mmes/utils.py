"""Utility functions for MMES"""
import logging
from typing import Any, Dict, Tuple

import numpy as np

logger = logging.getLogger('mmes')


class MmesError(Exception):
    """Base class for every error raised by the mmes package."""


class ConfigError(MmesError):
    """Invalid or unreadable run configuration."""


class ShapeError(MmesError):
    """Dimension mismatch, invalid mode partition or shape underflow."""


class WindowTooLargeError(ShapeError):
    """An embedding window exceeds the length of the mode it slides over."""


class TensorValueError(MmesError):
    """Invalid values: non-finite entries, non-normalized kernels, bad factors."""


class DataFormatError(MmesError):
    """Unreadable input file, unsupported bit depth or malformed report line."""


class MissingCacheError(MmesError):
    """A backward pass was requested without the matching forward cache."""


class NonFiniteError(MmesError):
    """A loss or gradient became NaN/Inf during optimization."""

    def __init__(self, message: str, trace: list | None = None, name: str | None = None):
        super().__init__(message)
        self.trace = trace or []
        self.name = name


def spawn_rngs(seed: int, count: int) -> Tuple[np.random.Generator, ...]:
    """
    Derive independent, reproducible generators from one integer seed.

    Args:
        seed: Run seed.
        count: Number of streams to spawn.

    Returns:
        Tuple of numpy Generators, one per stream, stable for a fixed seed.
    """
    children = np.random.SeedSequence(seed).spawn(count)
    return tuple(np.random.default_rng(child) for child in children)


def inner(a: np.ndarray, b: np.ndarray) -> float:
    """Frobenius inner product of two equally shaped arrays."""
    if a.shape != b.shape:
        raise ShapeError(f"inner product of shapes {a.shape} and {b.shape}")
    return float(np.dot(a.ravel(), b.ravel()))


def describe_array(a: np.ndarray) -> Dict[str, Any]:
    """Small diagnostic summary used when aborting on non-finite values."""
    finite = np.isfinite(a)
    summary: Dict[str, Any] = {
        "shape": list(a.shape),
        "non_finite": int(a.size - np.count_nonzero(finite)),
    }
    if finite.any():
        summary["min"] = float(a[finite].min())
        summary["max"] = float(a[finite].max())
    return summary


# Overlap counts keyed by (mode length, window)
_window_counts_cache: Dict[Tuple[int, int], np.ndarray] = {}


def get_window_counts(length: int, window: int) -> np.ndarray:
    """
    Overlap count of every padded position for one mode (the diagonal of SᵀS).

    Args:
        length: Unpadded mode length I.
        window: Window size τ.

    Returns:
        Array of length I + 2(τ-1) holding how many windows cover each padded sample.
    """
    key = (length, window)
    if key not in _window_counts_cache:
        n_windows = length + window - 1
        starts = np.arange(n_windows)[:, None] + np.arange(window)[None, :]
        counts = np.bincount(starts.ravel(), minlength=length + 2 * (window - 1)).astype(np.float64)
        counts.setflags(write=False)
        _window_counts_cache[key] = counts
        logger.debug(f"Cached window counts for I={length}, tau={window}")
    return _window_counts_cache[key]
