"""MMES Auto-encoder Tools - patch-manifold encoder/decoder, reverse-mode gradients and Adam"""
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np

from mmes.utils import MissingCacheError, NonFiniteError, ShapeError, TensorValueError, describe_array

logger = logging.getLogger('mmes')

ACTIVATIONS = ("leaky_relu", "none")
CHECKPOINT_VERSION = 1


def validate_chain(dims: Sequence[int], linear: bool = False) -> None:
    """
    Check a layer size chain d_0..d_L: palindromic, odd length >= 3, bottleneck at most the input width.

    The bottleneck may equal the input width for the linear baseline and for chains with hidden
    layers (full-rank denoising protocol); a bare nonlinear [D, D, D] chain is rejected.
    """
    dims = list(dims)
    if len(dims) < 3 or len(dims) % 2 == 0:
        raise ShapeError(f"layer chain {dims} needs an odd number (>= 3) of sizes")
    if dims != dims[::-1]:
        raise ShapeError(f"layer chain {dims} is not symmetric about its bottleneck")
    if any(d < 1 for d in dims):
        raise ShapeError(f"layer chain {dims} has non-positive sizes")
    r = dims[len(dims) // 2]
    if r > dims[0] or (r == dims[0] and not linear and len(dims) == 3):
        raise ShapeError(f"bottleneck {r} exceeds the input width {dims[0]} or equals it in a [D, D, D] nonlinear chain")


def hidden_chain(d: int, r: int, scale: int = 8, hidden: Sequence[int] | None = None, linear: bool = False) -> List[int]:
    """
    Layer chain for D-dimensional patches.

    Defaults to [D, scale·D, r, scale·D, D]; the linear baseline uses [D, r, D].
    """
    if linear:
        return [d, r, d]
    hidden = list(hidden) if hidden is not None else [scale * d]
    return [d, *hidden, r, *hidden[::-1], d]


@dataclass
class MlpParams:
    """Weights, biases and activations of the encoder φ_r followed by the decoder ψ_r."""

    weights: List[np.ndarray]
    biases: List[np.ndarray]
    activations: List[str]
    negative_slope: float = 0.2

    def __post_init__(self):
        if not (len(self.weights) == len(self.biases) == len(self.activations)) or not self.weights:
            raise ShapeError("weights, biases and activations must be non-empty lists of equal length")
        for name in self.activations:
            if name not in ACTIVATIONS:
                raise TensorValueError(f"unknown activation '{name}'")
        if self.activations[-1] != "none":
            raise TensorValueError("the decoder output layer must not have an activation")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ShapeError(f"layer {l}: weight {w.shape} and bias {b.shape} do not match")
            if l and w.shape[1] != self.weights[l - 1].shape[0]:
                raise ShapeError(f"layer {l} expects {w.shape[1]} inputs, previous layer gives {self.weights[l - 1].shape[0]}")
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise TensorValueError(f"layer {l} has non-finite parameters")
        validate_chain(self.dims, linear=self.linear)

    @property
    def dims(self) -> List[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def bottleneck(self) -> int:
        """Index into dims (and into layer outputs) of the latent layer."""
        return len(self.weights) // 2

    @property
    def r(self) -> int:
        return self.dims[self.bottleneck]

    @property
    def linear(self) -> bool:
        return all(a == "none" for a in self.activations)

    def named(self) -> Dict[str, np.ndarray]:
        """Name → array view of every parameter; arrays are shared, not copied."""
        named = {}
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            named[f"W{l}"] = w
            named[f"b{l}"] = b
        return named


@dataclass
class AeForward:
    """Result of a forward pass, holding the caches the backward pass needs."""

    latent: np.ndarray
    output: np.ndarray
    inputs: List[np.ndarray]
    preacts: List[np.ndarray]


def init_params(dims: Sequence[int], seed: int, linear: bool = False, negative_slope: float = 0.2) -> MlpParams:
    """
    Glorot-uniform weights in ±sqrt(6/(fan_in+fan_out)) and zero biases.

    Args:
        dims: Symmetric layer size chain.
        seed: Seed, or a numpy Generator to draw from.
        linear: Build the activation-free linear baseline.
        negative_slope: Leaky rectifier slope for hidden layers.
    """
    validate_chain(dims, linear=linear)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    weights, biases, activations = [], [], []
    n_layers = len(dims) - 1
    for l in range(n_layers):
        fan_in, fan_out = dims[l], dims[l + 1]
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
        activations.append("none" if linear or l == n_layers - 1 else "leaky_relu")
    logger.debug(f"Initialized auto-encoder {list(dims)} (linear={linear})")
    return MlpParams(weights, biases, activations, negative_slope)


def _activate(z: np.ndarray, name: str, slope: float) -> np.ndarray:
    if name == "leaky_relu":
        return np.where(z > 0, z, slope * z)
    return z


def _run_layers(p: MlpParams, a: np.ndarray, layers: range, record: AeForward | None = None) -> np.ndarray:
    for l in layers:
        if record is not None:
            record.inputs.append(a)
        z = p.weights[l] @ a + p.biases[l][:, None]
        if record is not None:
            record.preacts.append(z)
        a = _activate(z, p.activations[l], p.negative_slope)
        if record is not None and l + 1 == p.bottleneck:
            record.latent = a
    return a


def ae_forward(p: MlpParams, h: np.ndarray) -> AeForward:
    """
    Auto-encode every column of a D×T matrix independently.

    Returns:
        AeForward with the r×T latent block, the D×T output and the layer caches.
    """
    if h.ndim != 2 or h.shape[0] != p.dims[0]:
        raise ShapeError(f"auto-encoder expects {p.dims[0]} rows, got shape {h.shape}")
    record = AeForward(latent=None, output=None, inputs=[], preacts=[])
    record.output = _run_layers(p, h, range(len(p.weights)), record)
    return record


def decode(p: MlpParams, latent: np.ndarray) -> np.ndarray:
    """Apply the decoder ψ_r to an r×K block of latent coordinates."""
    if latent.ndim != 2 or latent.shape[0] != p.r:
        raise ShapeError(f"decoder expects {p.r} latent rows, got shape {latent.shape}")
    return _run_layers(p, latent, range(p.bottleneck, len(p.weights)))


def ae_backward(p: MlpParams, fwd: AeForward | None, upstream: np.ndarray) -> Tuple[Dict[str, np.ndarray], np.ndarray]:
    """
    Reverse-mode gradients of a scalar loss through ae_forward.

    Args:
        p: Parameters used in the forward pass.
        fwd: Cache returned by ae_forward.
        upstream: ∂L/∂output, D×T.

    Returns:
        (gradients keyed like p.named(), ∂L/∂input)
    """
    if fwd is None or len(fwd.inputs) != len(p.weights) or len(fwd.preacts) != len(p.weights):
        raise MissingCacheError("ae_backward needs the cache of a prior ae_forward call")
    if upstream.shape != fwd.output.shape:
        raise ShapeError(f"upstream gradient {upstream.shape} does not match output {fwd.output.shape}")
    grads = {}
    g = upstream
    for l in reversed(range(len(p.weights))):
        if p.activations[l] == "leaky_relu":
            g = g * np.where(fwd.preacts[l] > 0, 1.0, p.negative_slope)
        grads[f"W{l}"] = g @ fwd.inputs[l].T
        grads[f"b{l}"] = g.sum(axis=1)
        g = p.weights[l].T @ g
    return {name: grads[name] for name in p.named()}, g


def sample_noise(shape: Tuple[int, ...], sigma: float, rng: np.random.Generator) -> np.ndarray:
    """I.i.d. zero-mean Gaussian noise of standard deviation sigma, drawn fresh from rng."""
    if sigma < 0:
        raise TensorValueError(f"noise standard deviation must be >= 0, got {sigma}")
    if sigma == 0:
        return np.zeros(shape)
    return sigma * rng.standard_normal(shape)


def add_noise(h: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Denoising input h + E; sigma=0 returns an unchanged copy."""
    return h + sample_noise(h.shape, sigma, rng)


@dataclass
class AdamState:
    """Bias-corrected Adam moments for a name → array parameter set."""

    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(state: AdamState, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]) -> AdamState:
    """
    One Adam update, applied to params in place.

    Raises:
        NonFiniteError: if any gradient holds NaN/Inf; nothing is updated in that case.
        ShapeError: if names or shapes of params and grads disagree.
    """
    if params.keys() != grads.keys():
        raise ShapeError(f"parameter names {sorted(params)} and gradient names {sorted(grads)} differ")
    for name, g in grads.items():
        if g.shape != params[name].shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, parameter has {params[name].shape}")
        if not np.isfinite(g).all():
            logger.error(f"Non-finite gradient for {name}: {describe_array(g)}")
            raise NonFiniteError(f"non-finite gradient for parameter {name}", name=name)

    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for name, theta in params.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(theta)
            state.v[name] = np.zeros_like(theta)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        theta -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return state


def latent_grid(latent: np.ndarray, n: int) -> np.ndarray:
    """
    Rectangular n×n lattice over the bounding box of 2-D latent codes.

    Args:
        latent: 2×T latent block.
        n: Points per axis.

    Returns:
        Array of shape (n, n, 2).
    """
    if latent.ndim != 2 or latent.shape[0] != 2:
        raise ShapeError(f"a latent lattice needs r=2 codes, got shape {latent.shape}")
    axes = [np.linspace(row.min(), row.max(), n) for row in latent]
    return np.stack(np.meshgrid(*axes, indexing='ij'), axis=-1)


def export_patch_manifold(p: MlpParams, grid: np.ndarray, patch_shape: Tuple[int, int]) -> np.ndarray:
    """
    Decode every lattice point to a patch and tile the patches into one montage.

    Args:
        p: Trained auto-encoder.
        grid: Lattice of latent points, shape (G1, G2, r).
        patch_shape: (τ_1, τ_2) with τ_1·τ_2 equal to the decoder output width.

    Returns:
        Montage of shape (G1·τ_1, G2·τ_2); tile (i, j) is the decoded grid[i, j].
    """
    if grid.ndim != 3 or grid.shape[2] != p.r:
        raise ShapeError(f"grid of shape {grid.shape} does not hold {p.r}-dimensional latent points")
    t1, t2 = patch_shape
    if t1 * t2 != p.dims[-1]:
        raise ShapeError(f"patch shape {patch_shape} does not match decoder width {p.dims[-1]}")
    g1, g2 = grid.shape[:2]
    patches = decode(p, grid.reshape(-1, p.r).T).T.reshape(g1, g2, t1, t2)
    return np.ascontiguousarray(patches.transpose(0, 2, 1, 3)).reshape(g1 * t1, g2 * t2)


def save_params(path: str | Path, p: MlpParams, extras: Dict[str, np.ndarray] | None = None) -> Path:
    """
    Write a versioned .npz checkpoint.

    Layout: `format_version` (int64), `dims` (int64), `layout` (JSON with activations and slope),
    `param_<name>` for every entry of p.named(), `extra_<name>` for extras (e.g. Z).
    All numeric arrays are stored little-endian.
    """
    path = Path(path)
    payload = {
        "format_version": np.array([CHECKPOINT_VERSION], dtype='<i8'),
        "dims": np.array(p.dims, dtype='<i8'),
        "layout": np.array(json.dumps({"activations": p.activations, "negative_slope": p.negative_slope})),
    }
    for name, arr in p.named().items():
        payload[f"param_{name}"] = np.asarray(arr, dtype='<f8')
    for name, arr in (extras or {}).items():
        payload[f"extra_{name}"] = np.asarray(arr, dtype='<f8')
    with open(path, 'wb') as fh:
        np.savez(fh, **payload)
    logger.info(f"Saved checkpoint {path}")
    return path


def load_params(path: str | Path) -> Tuple[MlpParams, Dict[str, np.ndarray]]:
    """Read a checkpoint written by save_params; returns the parameters and the extra arrays."""
    with np.load(path) as data:
        version = int(data["format_version"][0])
        if version != CHECKPOINT_VERSION:
            raise TensorValueError(f"unsupported checkpoint version {version}")
        layout = json.loads(str(data["layout"]))
        n_layers = len(data["dims"]) - 1
        weights = [data[f"param_W{l}"].astype(np.float64) for l in range(n_layers)]
        biases = [data[f"param_b{l}"].astype(np.float64) for l in range(n_layers)]
        extras = {k[len("extra_"):]: data[k].astype(np.float64) for k in data.files if k.startswith("extra_")}
    return MlpParams(weights, biases, layout["activations"], layout["negative_slope"]), extras
