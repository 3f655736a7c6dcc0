"""MMES Tensor Core - padding, trimming, mode products and grouped unfoldings

Tensors are float64 numpy arrays in row-major order (last index fastest). Modes are
0-based. Within an unfolding group the listed-first mode varies slowest.
"""
import logging
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from mmes.utils import ShapeError, TensorValueError, WindowTooLargeError, get_window_counts

logger = logging.getLogger('mmes')


def as_tensor(x, name: str = "tensor") -> np.ndarray:
    """
    Convert input to a DenseTensor: a finite, C-contiguous float64 array with ndim >= 1.

    Raises:
        TensorValueError: on empty modes, zero-dimensional input or non-finite values.
    """
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.ndim < 1:
        raise TensorValueError(f"{name} must have at least one mode")
    if any(n < 1 for n in arr.shape):
        raise TensorValueError(f"{name} has an empty mode: shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise TensorValueError(f"{name} contains NaN or Inf values")
    return arr


@dataclass(frozen=True)
class EmbedShape:
    """Per-mode window sizes (τ_1..τ_N) of the delay embedding."""

    tau: Tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "tau", tuple(int(t) for t in self.tau))
        if not self.tau:
            raise ShapeError("EmbedShape needs at least one window size")
        if any(t < 1 for t in self.tau):
            raise WindowTooLargeError(f"window sizes must be >= 1, got {self.tau}")

    @classmethod
    def broadcast(cls, tau: int | Sequence[int], ndim: int) -> "EmbedShape":
        """Build an EmbedShape for an ndim-way tensor; a scalar or 1-element τ repeats over every mode."""
        if isinstance(tau, int):
            return cls((tau,) * ndim)
        tau = tuple(tau)
        if len(tau) == 1 and ndim > 1:
            tau = tau * ndim
        return cls(tau)

    @property
    def ndim(self) -> int:
        return len(self.tau)

    @property
    def D(self) -> int:
        return int(np.prod(self.tau))

    def validate_for(self, shape: Sequence[int]) -> None:
        """Check that every window fits its mode (1 <= τ_n <= I_n)."""
        if len(shape) != self.ndim:
            raise ShapeError(f"tau {self.tau} does not match tensor order {len(shape)}")
        for n, (length, t) in enumerate(zip(shape, self.tau)):
            if t > length:
                raise WindowTooLargeError(f"window {t} exceeds length {length} of mode {n}")

    def padded_shape(self, shape: Sequence[int]) -> Tuple[int, ...]:
        return tuple(i + 2 * (t - 1) for i, t in zip(shape, self.tau))

    def window_grid(self, shape: Sequence[int]) -> Tuple[int, ...]:
        """Number of window positions per mode, I_n + τ_n - 1."""
        return tuple(i + t - 1 for i, t in zip(shape, self.tau))

    def T(self, shape: Sequence[int]) -> int:
        return int(np.prod(self.window_grid(shape)))

    def window_counts(self, shape: Sequence[int]) -> Tuple[np.ndarray, ...]:
        """Per-mode overlap counts over the padded extent."""
        return tuple(get_window_counts(i, t) for i, t in zip(shape, self.tau))


def _reflect_index(length: int, window: int) -> np.ndarray:
    """Source index of every padded position under reflect-without-edge-repeat padding."""
    q = np.arange(length + 2 * (window - 1)) - (window - 1)
    q = np.abs(q)
    return np.where(q > length - 1, 2 * (length - 1) - q, q)


def reflection_pad(x: np.ndarray, tau: EmbedShape) -> np.ndarray:
    """
    Reflect-pad every mode by τ_n - 1 samples on both sides; the edge sample is not repeated.

    Example:
        [x1..x7] with τ=3 becomes [x3,x2,x1,x2,...,x7,x6,x5].
    """
    tau.validate_for(x.shape)
    widths = [(t - 1, t - 1) for t in tau.tau]
    return np.pad(x, widths, mode='reflect')


def pad_adjoint(y: np.ndarray, tau: EmbedShape, shape: Sequence[int]) -> np.ndarray:
    """
    Adjoint of reflection_pad: scatter-add every padded sample back onto its source index.

    Args:
        y: Array of the padded shape.
        tau: Window sizes used for padding.
        shape: Unpadded shape to return.
    """
    tau.validate_for(shape)
    if tuple(y.shape) != tau.padded_shape(shape):
        raise ShapeError(f"pad adjoint expects shape {tau.padded_shape(shape)}, got {y.shape}")
    current = y
    for axis, (length, t) in enumerate(zip(shape, tau.tau)):
        if t == 1:
            continue
        acc_shape = list(current.shape)
        acc_shape[axis] = length
        acc = np.zeros(acc_shape)
        np.add.at(np.moveaxis(acc, axis, 0), _reflect_index(length, t), np.moveaxis(current, axis, 0))
        current = acc
    return np.array(current, dtype=np.float64, copy=True)


def trim(x: np.ndarray, tau: EmbedShape) -> np.ndarray:
    """Remove τ_n - 1 leading and trailing slices from every mode."""
    if x.ndim != tau.ndim:
        raise ShapeError(f"tau {tau.tau} does not match tensor order {x.ndim}")
    for n, (length, t) in enumerate(zip(x.shape, tau.tau)):
        if length < 2 * (t - 1) + 1:
            raise ShapeError(f"mode {n} of length {length} is too short to trim {t - 1} from each end")
    index = tuple(slice(t - 1, length - (t - 1)) for length, t in zip(x.shape, tau.tau))
    return np.ascontiguousarray(x[index])


def mode_n_product(x: np.ndarray, m: np.ndarray, mode: int) -> np.ndarray:
    """
    Mode-n product x ×_mode m: every mode-`mode` fiber of x is multiplied by m.

    The output has m.shape[0] entries along `mode`; every other mode is unchanged.
    """
    if m.ndim != 2:
        raise ShapeError(f"mode product needs a matrix, got {m.ndim} dimensions")
    if not 0 <= mode < x.ndim:
        raise ShapeError(f"mode {mode} out of range for order-{x.ndim} tensor")
    if m.shape[1] != x.shape[mode]:
        raise ShapeError(f"matrix has {m.shape[1]} columns but mode {mode} has length {x.shape[mode]}")
    return np.moveaxis(np.tensordot(m, x, axes=(1, mode)), 0, mode)


def _check_partition(ndim: int, row_modes: Sequence[int], col_modes: Sequence[int]) -> None:
    if sorted(list(row_modes) + list(col_modes)) != list(range(ndim)):
        raise ShapeError(f"modes {list(row_modes)} + {list(col_modes)} are not a partition of {ndim} modes")


def unfold_group(x: np.ndarray, row_modes: Sequence[int], col_modes: Sequence[int]) -> np.ndarray:
    """Matricize x with the listed modes as rows and columns (listed-first mode slowest)."""
    _check_partition(x.ndim, row_modes, col_modes)
    rows = int(np.prod([x.shape[m] for m in row_modes]))
    cols = int(np.prod([x.shape[m] for m in col_modes]))
    return np.ascontiguousarray(np.transpose(x, list(row_modes) + list(col_modes))).reshape(rows, cols)


def fold_group(m: np.ndarray, row_modes: Sequence[int], col_modes: Sequence[int], shape: Sequence[int]) -> np.ndarray:
    """Inverse of unfold_group for a tensor of the given shape."""
    _check_partition(len(shape), row_modes, col_modes)
    order = list(row_modes) + list(col_modes)
    grouped_shape = [shape[k] for k in order]
    if m.size != int(np.prod(shape)):
        raise ShapeError(f"matrix of size {m.size} cannot fold into shape {tuple(shape)}")
    return np.ascontiguousarray(np.transpose(m.reshape(grouped_shape), np.argsort(order)))
