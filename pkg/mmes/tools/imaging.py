"""MMES Color Imaging - shared patch manifold across channels and a learned 1×1 color transform

Each channel of Z is embedded on its own; the three D×T blocks are concatenated channel-major
along the column axis into D×3T and auto-encoded by one shared network. After the
pseudo-inverse, every pixel c is mapped to M·c + b.
"""
import logging
from dataclasses import dataclass
from typing import Any, Dict, Sequence, Tuple

import numpy as np

from mmes.tools.autoencoder import MlpParams, hidden_chain, init_params
from mmes.tools.degradation import Degradation
from mmes.tools.embedding import mdt_adjoint, mdt_forward, mdt_pinv, mdt_pinv_adjoint
from mmes.tools.solver import PatchGenerator, ReconstructionResult, SolverConfig, reconstruct
from mmes.tools.tensor import EmbedShape
from mmes.utils import ShapeError, TensorValueError, spawn_rngs

logger = logging.getLogger('mmes')

CHANNELS = 3


@dataclass
class ColorPipelineParams:
    shared_ae: MlpParams
    color_matrix: np.ndarray
    color_bias: np.ndarray

    def __post_init__(self):
        if self.color_matrix.shape != (CHANNELS, CHANNELS) or self.color_bias.shape != (CHANNELS,):
            raise ShapeError("color transform must be a 3x3 matrix and a length-3 bias")
        if not (np.isfinite(self.color_matrix).all() and np.isfinite(self.color_bias).all()):
            raise TensorValueError("color transform has non-finite entries")

    @classmethod
    def identity(cls, shared_ae: MlpParams) -> "ColorPipelineParams":
        return cls(shared_ae, np.eye(CHANNELS), np.zeros(CHANNELS))


def split_blocks(m: np.ndarray) -> list:
    """Split a D×3T concatenation back into its three channel blocks."""
    if m.shape[1] % CHANNELS:
        raise ShapeError(f"{m.shape[1]} columns cannot split into {CHANNELS} blocks")
    return np.split(m, CHANNELS, axis=1)


class ColorPatchGenerator(PatchGenerator):
    """Generator for (H, W, 3) images with a shared auto-encoder and a 1×1 color transform."""

    def __init__(self, shape: Sequence[int], cfg: SolverConfig, params: ColorPipelineParams | None = None,
                 rng: np.random.Generator | int = 0):
        shape = tuple(shape)
        if len(shape) != 3 or shape[2] != CHANNELS:
            raise ShapeError(f"color pipeline needs an (H, W, 3) image, got shape {shape}")
        self.shape = shape
        self.tau = self._embed_shape(cfg)
        self.tau.validate_for(shape[:2])
        if params is None:
            dims = hidden_chain(self.tau.D, cfg.r, cfg.hidden_scale, cfg.hidden, cfg.linear)
            params = ColorPipelineParams.identity(
                init_params(dims, rng, linear=cfg.linear, negative_slope=cfg.negative_slope))
        if params.shared_ae.dims[0] != self.tau.D:
            raise ShapeError(f"auto-encoder width {params.shared_ae.dims[0]} does not match patch dimension {self.tau.D}")
        self.params = params
        self.ae = params.shared_ae
        self.learn_color = cfg.learn_color_transform

    def _embed_shape(self, cfg: SolverConfig) -> EmbedShape:
        return EmbedShape.broadcast(cfg.tau, 2)

    @property
    def T(self) -> int:
        return CHANNELS * self.tau.T(self.shape[:2])

    def embed(self, z: np.ndarray) -> np.ndarray:
        return np.concatenate([mdt_forward(z[..., c], self.tau).values for c in range(CHANNELS)], axis=1)

    def embed_adjoint(self, g: np.ndarray) -> np.ndarray:
        return np.stack([mdt_adjoint(block, self.shape[:2], self.tau) for block in split_blocks(g)], axis=-1)

    def unembed(self, a: np.ndarray) -> Tuple[np.ndarray, Any]:
        channels = np.stack([mdt_pinv(block, self.shape[:2], self.tau) for block in split_blocks(a)], axis=-1)
        return channels @ self.params.color_matrix.T + self.params.color_bias, channels

    def unembed_adjoint(self, g: np.ndarray, cache: Any) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
        g_channels = g @ self.params.color_matrix
        g_a = np.concatenate([mdt_pinv_adjoint(g_channels[..., c], self.tau) for c in range(CHANNELS)], axis=1)
        if not self.learn_color:
            return g_a, {}
        return g_a, {
            "color_matrix": np.einsum('hwi,hwj->ij', g, cache),
            "color_bias": g.sum(axis=(0, 1)),
        }

    def parameters(self) -> Dict[str, np.ndarray]:
        named = self.ae.named()
        if self.learn_color:
            named["color_matrix"] = self.params.color_matrix
            named["color_bias"] = self.params.color_bias
        return named


def color_reconstruct(y: np.ndarray, f: Degradation, cfg: SolverConfig,
                      reference: np.ndarray | None = None) -> ReconstructionResult:
    """
    Reconstruct an (H, W, 3) image with the channel-shared manifold and learned color transform.

    Losses, gradients and the optimization schedule are those of reconstruct().
    """
    shape = f.input_shape(y.shape)
    if len(shape) != 3 or shape[2] != CHANNELS:
        raise ShapeError(f"color reconstruction needs 3 channels, got shape {tuple(y.shape)}")
    init_rng, _ = spawn_rngs(cfg.seed, 2)
    generator = ColorPatchGenerator(shape, cfg, rng=init_rng)
    logger.info(f"Color pipeline: patch dim {generator.D}, {generator.T} columns, learn_color={generator.learn_color}")
    return reconstruct(y, f, cfg, reference=reference, shape=shape, generator=generator)
