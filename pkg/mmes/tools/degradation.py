"""MMES Degradation Tools - observation operators F with exact adjoints

Blur and down-sampling use reflect-without-edge-repeat boundaries, the same padding as the
delay embedding. Down-sampling keeps every s-th sample starting at offset s // 2.
"""
import logging
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import signal

from mmes.tools.tensor import EmbedShape, pad_adjoint, reflection_pad
from mmes.utils import ShapeError, TensorValueError

logger = logging.getLogger('mmes')

KINDS = ("identity", "mask", "downsample", "blur")
LANCZOS_FACTORS = (2, 4, 8)


@dataclass(frozen=True, eq=False)
class Degradation:
    """The observation operator: identity, mask projection P_Ω, down-sampling or blur."""

    kind: str
    mask: np.ndarray | None = None
    factor: int = 1
    kernel: np.ndarray | None = None
    spatial_modes: Tuple[int, ...] | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise TensorValueError(f"unknown degradation '{self.kind}', expected one of {KINDS}")
        if self.kind == "mask":
            if self.mask is None:
                raise TensorValueError("a mask degradation needs a support mask")
            object.__setattr__(self, "mask", np.asarray(self.mask, dtype=bool))
        if self.kind == "downsample" and (int(self.factor) != self.factor or self.factor < 1):
            raise TensorValueError(f"down-sampling factor must be a positive integer, got {self.factor}")
        if self.kind in ("downsample", "blur"):
            if self.kernel is None:
                raise TensorValueError(f"a {self.kind} degradation needs a kernel")
            kernel = np.asarray(self.kernel, dtype=np.float64)
            if not np.isfinite(kernel).all():
                raise TensorValueError("kernel has non-finite taps")
            if abs(kernel.sum() - 1.0) > 1e-9:
                raise TensorValueError(f"kernel must sum to 1, sums to {kernel.sum()}")
            if any(n % 2 == 0 for n in kernel.shape):
                raise TensorValueError(f"kernel extents must be odd, got {kernel.shape}")
            if self.kind == "downsample" and kernel.ndim != 1:
                raise TensorValueError("down-sampling uses a 1-D separable kernel")
            object.__setattr__(self, "kernel", kernel)

    @classmethod
    def identity(cls) -> "Degradation":
        return cls("identity")

    @classmethod
    def masked(cls, mask: np.ndarray) -> "Degradation":
        return cls("mask", mask=mask)

    @classmethod
    def downsampled(cls, factor: int, kernel: np.ndarray | None = None,
                    spatial_modes: Sequence[int] | None = None) -> "Degradation":
        kernel = make_lanczos2_kernel(factor) if kernel is None else kernel
        return cls("downsample", factor=factor, kernel=kernel,
                   spatial_modes=None if spatial_modes is None else tuple(spatial_modes))

    @classmethod
    def blurred(cls, kernel: np.ndarray) -> "Degradation":
        return cls("blur", kernel=kernel)

    def _modes(self, ndim: int) -> Tuple[int, ...]:
        return self.spatial_modes if self.spatial_modes is not None else tuple(range(min(ndim, 2)))

    def input_shape(self, observed_shape: Sequence[int]) -> Tuple[int, ...]:
        """Shape of X for an observation of the given shape."""
        shape = list(observed_shape)
        if self.kind == "downsample":
            for axis in self._modes(len(shape)):
                shape[axis] *= self.factor
        return tuple(shape)

    def output_shape(self, shape: Sequence[int]) -> Tuple[int, ...]:
        """Shape of F(X) for X of the given shape."""
        shape = list(shape)
        if self.kind == "downsample":
            for axis in self._modes(len(shape)):
                if shape[axis] % self.factor:
                    raise ShapeError(f"mode {axis} of length {shape[axis]} is not divisible by {self.factor}")
                shape[axis] //= self.factor
        return tuple(shape)


def _axis_pad(ndim: int, axis: int, radius: int) -> EmbedShape:
    return EmbedShape(tuple(radius + 1 if a == axis else 1 for a in range(ndim)))


def _correlate_axis(x: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    """Same-size correlation along one axis with reflect boundary."""
    padded = reflection_pad(x, _axis_pad(x.ndim, axis, len(kernel) // 2))
    return sliding_window_view(padded, len(kernel), axis=axis) @ kernel


def _correlate_axis_adjoint(y: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    """Adjoint of _correlate_axis: full convolution followed by the padding adjoint."""
    k = len(kernel)
    widths = [(k - 1, k - 1) if a == axis else (0, 0) for a in range(y.ndim)]
    full = sliding_window_view(np.pad(y, widths), k, axis=axis) @ kernel[::-1]
    return pad_adjoint(full, _axis_pad(y.ndim, axis, k // 2), y.shape)


def _blur_setup(f: Degradation, ndim: int) -> Tuple[np.ndarray, EmbedShape]:
    if f.kernel.ndim > ndim:
        raise ShapeError(f"{f.kernel.ndim}-way kernel cannot blur a {ndim}-way tensor")
    kernel = f.kernel.reshape(f.kernel.shape + (1,) * (ndim - f.kernel.ndim))
    return kernel, EmbedShape(tuple(n // 2 + 1 for n in kernel.shape))


def apply(f: Degradation, x: np.ndarray) -> np.ndarray:
    """Evaluate F(x)."""
    if f.kind == "identity":
        return x.copy()
    if f.kind == "mask":
        if f.mask.shape != x.shape:
            raise ShapeError(f"mask shape {f.mask.shape} does not match tensor shape {x.shape}")
        return np.where(f.mask, x, 0.0)
    if f.kind == "blur":
        kernel, tau = _blur_setup(f, x.ndim)
        return signal.correlate(reflection_pad(x, tau), kernel, mode='valid')
    f.output_shape(x.shape)
    s = f.factor
    for axis in f._modes(x.ndim):
        x = _correlate_axis(x, f.kernel, axis)
        x = np.take(x, np.arange(s // 2, x.shape[axis], s), axis=axis)
    return x


def adjoint(f: Degradation, y: np.ndarray) -> np.ndarray:
    """Evaluate Fᵀ(y), the exact adjoint of apply."""
    if f.kind == "identity":
        return y.copy()
    if f.kind == "mask":
        return apply(f, y)
    if f.kind == "blur":
        kernel, tau = _blur_setup(f, y.ndim)
        full = signal.convolve(y, kernel, mode='full')
        return pad_adjoint(full, tau, y.shape)
    s = f.factor
    for axis in reversed(f._modes(y.ndim)):
        shape = list(y.shape)
        shape[axis] *= s
        up = np.zeros(shape)
        index = [slice(None)] * y.ndim
        index[axis] = slice(s // 2, None, s)
        up[tuple(index)] = y
        y = _correlate_axis_adjoint(up, f.kernel, axis)
    return y


def lanczos2(x: np.ndarray) -> np.ndarray:
    """Lanczos2 window L(x) = sinc(x)·sinc(x/2) on |x| < 2, zero elsewhere."""
    x = np.asarray(x, dtype=np.float64)
    return np.where(np.abs(x) < 2, np.sinc(x) * np.sinc(x / 2), 0.0)


def make_lanczos2_kernel(factor: int) -> np.ndarray:
    """Normalized Lanczos2 anti-aliasing kernel with 4s-1 taps sampled at spacing 1/s."""
    if factor not in LANCZOS_FACTORS:
        raise TensorValueError(f"Lanczos2 factor must be one of {LANCZOS_FACTORS}, got {factor}")
    taps = lanczos2(np.arange(-(2 * factor - 1), 2 * factor) / factor)
    return taps / taps.sum()


def make_gaussian_kernel(std: float, radius: int | None = None, ndim: int = 2) -> np.ndarray:
    """
    Separable Gaussian blur kernel, truncated at radius (default ceil(3·std)) and normalized.

    Returns:
        Kernel of shape (2·radius+1,) * ndim.
    """
    if std <= 0:
        raise TensorValueError(f"blur standard deviation must be positive, got {std}")
    radius = int(np.ceil(3 * std)) if radius is None else int(radius)
    k = np.arange(-radius, radius + 1)
    g = np.exp(-(k ** 2) / (2.0 * std ** 2))
    g /= g.sum()
    kernel = g
    for _ in range(ndim - 1):
        kernel = np.multiply.outer(kernel, g)
    return kernel / kernel.sum()


def make_random_mask(shape: Sequence[int], missing_rate: float, seed: int, per_pixel: bool = False) -> np.ndarray:
    """
    Uniformly random support with exactly round((1-ρ)·size) observed entries.

    Args:
        shape: Tensor shape.
        missing_rate: Fraction ρ in [0, 1) of entries to remove.
        seed: Mask seed.
        per_pixel: For (H, W, C) shapes, remove whole pixels across all channels.
    """
    if not 0 <= missing_rate < 1:
        raise TensorValueError(f"missing rate must be in [0, 1), got {missing_rate}")
    shape = tuple(shape)
    base = shape[:2] if per_pixel and len(shape) == 3 else shape
    size = int(np.prod(base))
    n_observed = round((1 - missing_rate) * size)
    rng = np.random.default_rng(seed)
    mask = np.zeros(size, dtype=bool)
    mask[rng.permutation(size)[:n_observed]] = True
    mask = mask.reshape(base)
    if base != shape:
        mask = np.repeat(mask[:, :, None], shape[2], axis=2)
    logger.debug(f"Random mask {shape}: {n_observed} of {size} observed (per_pixel={per_pixel})")
    return mask
