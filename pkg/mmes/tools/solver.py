"""MMES Solver - joint optimization of the latent tensor Z and the patch auto-encoder

Minimizes L_rec + λ·L_AE with
    L_AE  = ||H - A_r(H + E)||²_F
    L_rec = (1/D)·||Y - F(H† A_r(H + E))||²_F
where H = H(Z), E is fresh Gaussian noise every iteration, and λ adapts multiplicatively.
"""
import logging
import time
from dataclasses import dataclass, field
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from mmes.tools.autoencoder import (
    AdamState,
    AeForward,
    MlpParams,
    adam_step,
    ae_backward,
    ae_forward,
    hidden_chain,
    init_params,
    sample_noise,
    validate_chain,
)
from mmes.tools.degradation import Degradation, adjoint, apply
from mmes.tools.embedding import mdt_adjoint, mdt_forward, mdt_pinv, mdt_pinv_adjoint
from mmes.tools.metrics import psnr
from mmes.tools.tensor import EmbedShape, as_tensor
from mmes.utils import MissingCacheError, NonFiniteError, ShapeError, spawn_rngs

logger = logging.getLogger('mmes')


class SolverConfig(BaseModel):
    """Hyperparameters of the optimization loop."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    tau: Tuple[int, ...] = (6,)
    r: int = 4
    sigma: float = 0.05
    hidden_scale: int = 8
    hidden: Optional[List[int]] = None
    linear: bool = False
    negative_slope: float = 0.2
    lambda0: float = 5.0
    lambda_up: float = 1.1
    lambda_down: float = 0.99
    lambda_cadence: int = 10
    lambda_mode: Literal["balance", "cap"] = "balance"
    ae_loss_cap: Optional[float] = None
    lr0: float = 0.01
    lr_decay: float = 0.98
    lr_decay_every: int = 100
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_iters: int = 20000
    seed: int = 0
    checkpoint_cadence: int = 100
    log_every: int = 1
    scale_rec: bool = True
    learn_color_transform: bool = True
    stop_mse: Optional[float] = None

    @field_validator("tau", mode="before")
    @classmethod
    def _scalar_tau(cls, value: Any) -> Any:
        return (value,) if isinstance(value, int) else value

    @model_validator(mode="after")
    def _check_ranges(self) -> "SolverConfig":
        if not self.tau or any(t < 1 for t in self.tau):
            raise ValueError(f"window sizes must be >= 1, got {self.tau}")
        if self.r < 1:
            raise ValueError("bottleneck width r must be >= 1")
        if len(self.tau) > 1:
            self.check_rank(len(self.tau))
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if min(self.lambda0, self.lr0, self.lr_decay, self.lambda_up, self.lambda_down, self.eps) <= 0:
            raise ValueError("rates, λ and learning-rate settings must be positive")
        if not self.lambda_down < 1 < self.lambda_up:
            raise ValueError("need lambda_down < 1 < lambda_up")
        if min(self.lambda_cadence, self.lr_decay_every, self.checkpoint_cadence, self.log_every) < 1:
            raise ValueError("cadences must be >= 1")
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")
        if self.lambda_mode == "cap" and (self.ae_loss_cap is None or self.ae_loss_cap <= 0):
            raise ValueError("lambda_mode='cap' needs a positive ae_loss_cap")
        return self

    def check_rank(self, ndim: int) -> None:
        """Raise ValueError unless the layer chain fits the patches of an ndim-way window."""
        d = EmbedShape.broadcast(self.tau, ndim).D
        try:
            validate_chain(hidden_chain(d, self.r, self.hidden_scale, self.hidden, self.linear), self.linear)
        except ShapeError as e:
            raise ValueError(f"r={self.r} does not fit patches of dimension {d}: {e}") from e


@dataclass(frozen=True)
class TraceRecord:
    """Diagnostics of one logged iteration."""

    iter: int
    l_rec: float
    l_ae: float
    lam: float
    lr: float
    psnr: Optional[float] = None


@dataclass
class Checkpoint:
    """Best noise-free output seen so far against a reference."""

    iter: int
    psnr: float
    x: np.ndarray
    z: np.ndarray
    params: Dict[str, np.ndarray]


class PatchGenerator:
    """The generator X = H† A_r H(Z) for a single N-way tensor."""

    def __init__(self, shape: Sequence[int], cfg: SolverConfig, ae: MlpParams | None = None,
                 rng: np.random.Generator | int = 0):
        self.shape = tuple(shape)
        self.tau = self._embed_shape(cfg)
        self.tau.validate_for(self.shape[:self.tau.ndim])
        if ae is None:
            dims = hidden_chain(self.tau.D, cfg.r, cfg.hidden_scale, cfg.hidden, cfg.linear)
            ae = init_params(dims, rng, linear=cfg.linear, negative_slope=cfg.negative_slope)
        if ae.dims[0] != self.tau.D:
            raise ShapeError(f"auto-encoder input width {ae.dims[0]} does not match patch dimension {self.tau.D}")
        self.ae = ae

    def _embed_shape(self, cfg: SolverConfig) -> EmbedShape:
        return EmbedShape.broadcast(cfg.tau, len(self.shape))

    @property
    def D(self) -> int:
        return self.tau.D

    @property
    def T(self) -> int:
        return self.tau.T(self.shape)

    def embed(self, z: np.ndarray) -> np.ndarray:
        return mdt_forward(z, self.tau).values

    def embed_adjoint(self, g: np.ndarray) -> np.ndarray:
        return mdt_adjoint(g, self.shape, self.tau)

    def unembed(self, a: np.ndarray) -> Tuple[np.ndarray, Any]:
        return mdt_pinv(a, self.shape, self.tau), None

    def unembed_adjoint(self, g: np.ndarray, cache: Any) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
        return mdt_pinv_adjoint(g, self.tau), {}

    def parameters(self) -> Dict[str, np.ndarray]:
        """Trainable arrays besides Z, shared with the generator."""
        return self.ae.named()

    def output(self, z: np.ndarray) -> np.ndarray:
        """Noise-free generator output H† A_r H(Z)."""
        return self.unembed(ae_forward(self.ae, self.embed(z)).output)[0]


@dataclass
class LossEval:
    """Losses of one iteration and the intermediates the backward pass reuses."""

    l_rec: float
    l_ae: float
    h: np.ndarray = field(repr=False)
    fwd: AeForward = field(repr=False)
    residual: np.ndarray = field(repr=False)
    unembed_cache: Any = field(repr=False)
    generator: PatchGenerator = field(repr=False)
    degradation: Degradation = field(repr=False)
    rec_scale: float = 1.0

    def total(self, lam: float) -> float:
        return self.l_rec + lam * self.l_ae


@dataclass
class ReconstructionResult:
    x_hat: np.ndarray
    trace: List[TraceRecord]
    z: np.ndarray
    generator: PatchGenerator
    best: Optional[Checkpoint] = None
    iterations: int = 0
    seconds: float = 0.0


def compute_losses(z: np.ndarray, generator: PatchGenerator, y: np.ndarray, f: Degradation,
                   cfg: SolverConfig, noise: np.ndarray) -> LossEval:
    """
    Evaluate L_rec and L_AE for the current Z and auto-encoder with a given noise draw.

    Raises:
        NonFiniteError: if either loss is NaN/Inf.
    """
    h = generator.embed(z)
    if noise.shape != h.shape:
        raise ShapeError(f"noise shape {noise.shape} does not match Hankel matrix {h.shape}")
    fwd = ae_forward(generator.ae, h + noise)
    x, unembed_cache = generator.unembed(fwd.output)
    fx = apply(f, x)
    if fx.shape != y.shape:
        raise ShapeError(f"F(X) has shape {fx.shape}, observation has {y.shape}")
    residual = fx - y
    scale = 1.0 / generator.D if cfg.scale_rec else 1.0
    l_rec = scale * float(np.sum(residual * residual))
    diff = h - fwd.output
    l_ae = float(np.sum(diff * diff))
    if not (np.isfinite(l_rec) and np.isfinite(l_ae)):
        raise NonFiniteError(f"non-finite loss: L_rec={l_rec}, L_AE={l_ae}")
    return LossEval(l_rec, l_ae, h, fwd, residual, unembed_cache, generator, f, scale)


def backward_total(ev: LossEval | None, lam: float) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
    """
    Exact gradient of L_rec + λ·L_AE with respect to Z and every generator parameter.

    The noise E is a constant of the iteration.
    """
    if ev is None or ev.fwd is None:
        raise MissingCacheError("backward_total needs the cache of compute_losses")
    gen = ev.generator
    g_x = 2.0 * ev.rec_scale * adjoint(ev.degradation, ev.residual)
    g_a, extra = gen.unembed_adjoint(g_x, ev.unembed_cache)
    diff = ev.fwd.output - ev.h
    g_a = g_a + 2.0 * lam * diff
    param_grads, g_in = ae_backward(gen.ae, ev.fwd, g_a)
    g_z = gen.embed_adjoint(g_in - 2.0 * lam * diff)
    return g_z, {**param_grads, **extra}


def lambda_update(lam: float, l_rec: float, l_ae: float, up: float = 1.1, down: float = 0.99,
                  mode: str = "balance", cap: float | None = None) -> float:
    """
    Trade-off adaptation.

    balance: λ·up when L_rec < L_AE, otherwise λ·down.
    cap: λ·up whenever L_AE exceeds cap, otherwise λ·down.
    """
    if mode == "cap":
        return lam * up if l_ae > cap else lam * down
    return lam * up if l_rec < l_ae else lam * down


def lr_schedule(iteration: int, cfg: SolverConfig) -> float:
    """lr0 · decay^floor(iter / lr_decay_every)."""
    return cfg.lr0 * cfg.lr_decay ** (iteration // cfg.lr_decay_every)


def init_latent(y: np.ndarray, f: Degradation, shape: Sequence[int]) -> np.ndarray:
    """
    Warm start for Z.

    Completion fills missing entries with the observed mean; down-sampling uses the DC-preserving
    scaled adjoint; blur and identity copy Y. All but completion are clipped to [0, 1].
    """
    if f.kind == "mask":
        observed = y[f.mask]
        fill = float(observed.mean()) if observed.size else 0.0
        return np.where(f.mask, y, fill)
    if f.kind == "downsample":
        z = adjoint(f, y) * float(f.factor) ** len(f._modes(y.ndim))
    else:
        z = y.copy()
    if z.shape != tuple(shape):
        raise ShapeError(f"initial Z has shape {z.shape}, expected {tuple(shape)}")
    return np.clip(z, 0.0, 1.0)


def reconstruct(y: np.ndarray, f: Degradation, cfg: SolverConfig, reference: np.ndarray | None = None,
                shape: Sequence[int] | None = None, generator: PatchGenerator | None = None,
                z0: np.ndarray | None = None) -> ReconstructionResult:
    """
    Run the full optimization loop for max_iters iterations.

    Args:
        y: Observation.
        f: Observation operator.
        cfg: Solver configuration.
        reference: Optional ground truth; enables PSNR tracing, best-checkpoint tracking and stop_mse.
        shape: Shape of X; inferred from f and y when omitted.
        generator: Pre-built generator (e.g. the color pipeline); a PatchGenerator by default.
        z0: Optional initial Z.

    Returns:
        ReconstructionResult with the noise-free output H† A_r H(Z).

    Raises:
        NonFiniteError: with the partial trace attached.
    """
    y = as_tensor(y, "observation")
    shape = tuple(shape) if shape is not None else f.input_shape(y.shape)
    if f.output_shape(shape) != y.shape:
        raise ShapeError(f"degradation maps {shape} to {f.output_shape(shape)}, observation is {y.shape}")
    init_rng, noise_rng = spawn_rngs(cfg.seed, 2)
    gen = generator if generator is not None else PatchGenerator(shape, cfg, rng=init_rng)
    if gen.shape != shape:
        raise ShapeError(f"generator shape {gen.shape} does not match {shape}")
    z = init_latent(y, f, shape) if z0 is None else as_tensor(z0, "initial Z").copy()
    params = {"Z": z, **gen.parameters()}
    adam = AdamState(lr=cfg.lr0, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
    lam = cfg.lambda0
    trace: List[TraceRecord] = []
    best: Checkpoint | None = None
    started = time.perf_counter()
    logger.info(f"Reconstructing {shape} with tau={gen.tau.tau}, r={gen.ae.r}, sigma={cfg.sigma}, "
                f"{cfg.max_iters} iterations")

    iteration = 0
    for iteration in range(cfg.max_iters):
        adam.lr = lr_schedule(iteration, cfg)
        noise = sample_noise((gen.D, gen.T), cfg.sigma, noise_rng)
        try:
            ev = compute_losses(z, gen, y, f, cfg, noise)
            g_z, grads = backward_total(ev, lam)
        except NonFiniteError as e:
            logger.error(f"Aborting at iteration {iteration}: {e}")
            e.trace = trace
            raise

        value = None
        stop = False
        if reference is not None and (iteration % cfg.checkpoint_cadence == 0 or iteration == cfg.max_iters - 1):
            x_now = gen.output(z)
            value = psnr(x_now, reference)
            if best is None or value > best.psnr:
                best = Checkpoint(iteration, value, x_now, z.copy(),
                                  {k: v.copy() for k, v in gen.parameters().items()})
            logger.info(f"iter {iteration}: L_rec={ev.l_rec:.6g} L_AE={ev.l_ae:.6g} lambda={lam:.6g} psnr={value:.3f}")
            if cfg.stop_mse is not None and float(np.mean((x_now - reference) ** 2)) <= cfg.stop_mse:
                stop = True
        if iteration % cfg.log_every == 0 or value is not None:
            trace.append(TraceRecord(iteration, ev.l_rec, ev.l_ae, lam, adam.lr, value))
            logger.debug(f"iter {iteration}: L_rec={ev.l_rec:.6g} L_AE={ev.l_ae:.6g} lambda={lam:.6g} lr={adam.lr:.6g}")
        if stop:
            logger.info(f"Reached target MSE {cfg.stop_mse} at iteration {iteration}")
            break

        try:
            adam_step(adam, params, {"Z": g_z, **grads})
        except NonFiniteError as e:
            e.trace = trace
            raise
        if (iteration + 1) % cfg.lambda_cadence == 0:
            lam = lambda_update(lam, ev.l_rec, ev.l_ae, cfg.lambda_up, cfg.lambda_down, cfg.lambda_mode, cfg.ae_loss_cap)

    x_hat = gen.output(z)
    iterations = iteration + 1 if cfg.max_iters else 0
    seconds = time.perf_counter() - started
    logger.info(f"Finished {iterations} iterations in {seconds:.1f}s")
    return ReconstructionResult(x_hat, trace, z, gen, best, iterations, seconds)
