"""MMES Delay Embedding Tools - multiway delay embedding (Hankelization), adjoint and pseudo-inverse

Row index of a Hankel matrix linearizes the in-window offset (d_1..d_N) and the column index
linearizes the window position (t_1..t_N); in both the first mode varies slowest.
"""
import logging
from dataclasses import dataclass
from functools import reduce
from typing import Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import signal

from mmes.tools.tensor import (
    EmbedShape,
    fold_group,
    mode_n_product,
    pad_adjoint,
    reflection_pad,
    trim,
    unfold_group,
)
from mmes.utils import ShapeError, WindowTooLargeError, get_window_counts

logger = logging.getLogger('mmes')


@dataclass(frozen=True)
class HankelMatrix:
    """D×T matrix of embedded patches with its provenance."""

    values: np.ndarray
    source_shape: Tuple[int, ...]
    tau: EmbedShape

    @property
    def D(self) -> int:
        return self.values.shape[0]

    @property
    def T(self) -> int:
        return self.values.shape[1]


def _embed_shape(tau, ndim: int) -> EmbedShape:
    return tau if isinstance(tau, EmbedShape) else EmbedShape.broadcast(tau, ndim)


def _check_matrix(m: np.ndarray, source_shape: Sequence[int], tau: EmbedShape) -> None:
    tau.validate_for(source_shape)
    expected = (tau.D, tau.T(source_shape))
    if m.shape != expected:
        raise ShapeError(f"expected a {expected[0]}x{expected[1]} Hankel matrix, got {m.shape}")


def _gather(padded: np.ndarray, tau: EmbedShape) -> np.ndarray:
    """Copy every τ-window of an already padded tensor into the columns of a D×T matrix."""
    n = padded.ndim
    windows = sliding_window_view(padded, tau.tau)
    grid_size = int(np.prod(windows.shape[:n]))
    return np.transpose(windows, list(range(n, 2 * n)) + list(range(n))).reshape(tau.D, grid_size)


def _overlap_add(m: np.ndarray, source_shape: Sequence[int], tau: EmbedShape) -> np.ndarray:
    """Sum every column back onto its window in the padded domain (the transpose of _gather)."""
    grid = tau.window_grid(source_shape)
    blocks = m.reshape(tau.tau + grid)
    acc = np.zeros(tau.padded_shape(source_shape))
    for offset in np.ndindex(*tau.tau):
        acc[tuple(slice(d, d + g) for d, g in zip(offset, grid))] += blocks[offset]
    return acc


def _count_tensor(source_shape: Sequence[int], tau: EmbedShape) -> np.ndarray:
    """Diagonal of (⊗S_n)ᵀ(⊗S_n) folded to the padded shape."""
    counts = [get_window_counts(length, t) for length, t in zip(source_shape, tau.tau)]
    return reduce(np.multiply.outer, counts)


def duplication_matrix(length: int, window: int) -> np.ndarray:
    """
    Duplication matrix S of shape τ(I+τ-1) × (I+2(τ-1)).

    Row block t (τ rows) selects the window starting at padded position t.
    """
    if not 1 <= window <= length:
        raise WindowTooLargeError(f"window {window} invalid for length {length}")
    rows = np.arange(window * (length + window - 1))
    s = np.zeros((rows.size, length + 2 * (window - 1)))
    s[rows, rows // window + rows % window] = 1.0
    return s


def mdt_forward(x: np.ndarray, tau) -> HankelMatrix:
    """
    Multiway delay embedding H(x): reflection padding followed by a stride-1 window gather.

    Args:
        x: N-way tensor.
        tau: EmbedShape, or window size(s) broadcast over the modes of x.

    Returns:
        HankelMatrix of shape (Πτ_n) × (Π(I_n+τ_n-1)).
    """
    tau = _embed_shape(tau, x.ndim)
    return HankelMatrix(_gather(reflection_pad(x, tau), tau), tuple(x.shape), tau)


def mdt_adjoint(m: np.ndarray, source_shape: Sequence[int], tau) -> np.ndarray:
    """Exact adjoint Hᵀ(m): overlap-add of the columns followed by the padding adjoint."""
    source_shape = tuple(source_shape)
    tau = _embed_shape(tau, len(source_shape))
    _check_matrix(m, source_shape, tau)
    return pad_adjoint(_overlap_add(m, source_shape, tau), tau, source_shape)


def mdt_pinv(m: np.ndarray, source_shape: Sequence[int], tau) -> np.ndarray:
    """
    Pseudo-inverse H†(m) = trim(fold(m) ×_1 S_1† ... ×_N S_N†).

    Each S_n† = (S_nᵀS_n)⁻¹S_nᵀ is applied as an overlap-add normalized by the window counts.
    """
    source_shape = tuple(source_shape)
    tau = _embed_shape(tau, len(source_shape))
    _check_matrix(m, source_shape, tau)
    acc = _overlap_add(m, source_shape, tau) / _count_tensor(source_shape, tau)
    return trim(acc, tau)


def mdt_pinv_adjoint(g: np.ndarray, tau) -> np.ndarray:
    """Adjoint of H†: zero-extend to the padded shape, normalize by window counts, gather windows."""
    tau = _embed_shape(tau, g.ndim)
    tau.validate_for(g.shape)
    padded = np.zeros(tau.padded_shape(g.shape))
    padded[tuple(slice(t - 1, t - 1 + n) for n, t in zip(g.shape, tau.tau))] = g
    return _gather(padded / _count_tensor(g.shape, tau), tau)


def _interleaved(source_shape: Sequence[int], tau: EmbedShape) -> Tuple[Tuple[int, ...], list, list]:
    grid = tau.window_grid(source_shape)
    shape = tuple(v for pair in zip(grid, tau.tau) for v in pair)
    n = len(grid)
    return shape, [2 * k + 1 for k in range(n)], [2 * k for k in range(n)]


def mdt_forward_dense(x: np.ndarray, tau) -> HankelMatrix:
    """Reference embedding built from explicit duplication matrices; meant for small tensors."""
    tau = _embed_shape(tau, x.ndim)
    duplicated = reflection_pad(x, tau)
    for n, (length, t) in enumerate(zip(x.shape, tau.tau)):
        duplicated = mode_n_product(duplicated, duplication_matrix(length, t), n)
    shape, rows, cols = _interleaved(x.shape, tau)
    return HankelMatrix(unfold_group(duplicated.reshape(shape), rows, cols), tuple(x.shape), tau)


def mdt_pinv_dense(m: np.ndarray, source_shape: Sequence[int], tau) -> np.ndarray:
    """Reference pseudo-inverse with explicit S_n† = (S_nᵀS_n)⁻¹S_nᵀ."""
    source_shape = tuple(source_shape)
    tau = _embed_shape(tau, len(source_shape))
    _check_matrix(m, source_shape, tau)
    shape, rows, cols = _interleaved(source_shape, tau)
    folded = fold_group(m, rows, cols, shape)
    folded = folded.reshape([g * t for g, t in zip(tau.window_grid(source_shape), tau.tau)])
    for n, (length, t) in enumerate(zip(source_shape, tau.tau)):
        s = duplication_matrix(length, t)
        folded = mode_n_product(folded, np.linalg.solve(s.T @ s, s.T), n)
    return trim(folded, tau)


def one_hot_windows(tau) -> np.ndarray:
    """The D×D identity folded into D one-hot filters of shape (τ_1..τ_N)."""
    tau = tau if isinstance(tau, EmbedShape) else EmbedShape(tuple(tau))
    return np.eye(tau.D).reshape((tau.D,) + tau.tau)


def mdt_forward_conv(x: np.ndarray, tau) -> HankelMatrix:
    """Embedding as valid cross-correlation of the padded tensor with every one-hot window."""
    tau = _embed_shape(tau, x.ndim)
    padded = reflection_pad(x, tau)
    rows = [signal.correlate(padded, w, mode='valid', method='direct').ravel() for w in one_hot_windows(tau)]
    return HankelMatrix(np.stack(rows), tuple(x.shape), tau)


def mdt_pinv_conv(m: np.ndarray, source_shape: Sequence[int], tau) -> np.ndarray:
    """Pseudo-inverse as transposed correlation with the one-hot windows, trimming and scaling by 1/D."""
    source_shape = tuple(source_shape)
    tau = _embed_shape(tau, len(source_shape))
    _check_matrix(m, source_shape, tau)
    grid = tau.window_grid(source_shape)
    acc = np.zeros(tau.padded_shape(source_shape))
    for row, w in zip(m, one_hot_windows(tau)):
        acc += signal.convolve(row.reshape(grid), w, mode='full', method='direct')
    return trim(acc, tau) / tau.D
