"""MMES Toy Dynamics - Lorenz signal generation and corruption"""
import logging
from typing import List, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from mmes.utils import NonFiniteError, TensorValueError

logger = logging.getLogger('mmes')


class LorenzConfig(BaseModel):
    """System parameters and integration settings; defaults are the canonical chaotic regime."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    sigma_l: float = 10.0
    rho: float = 28.0
    beta: float = 8.0 / 3.0
    dt: float = Field(0.01, gt=0)
    steps: int = Field(2000, ge=1)
    burn_in: int = Field(3000, ge=0)
    initial: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    component: int = Field(0, ge=0, le=2)


def lorenz_rhs(state: np.ndarray, sigma_l: float, rho: float, beta: float) -> np.ndarray:
    x, y, z = state
    return np.array([sigma_l * (y - x), x * (rho - z) - y, x * y - beta * z])


def rk4_step(state: np.ndarray, dt: float, sigma_l: float, rho: float, beta: float) -> np.ndarray:
    """One classical fourth-order Runge-Kutta step."""
    k1 = lorenz_rhs(state, sigma_l, rho, beta)
    k2 = lorenz_rhs(state + 0.5 * dt * k1, sigma_l, rho, beta)
    k3 = lorenz_rhs(state + 0.5 * dt * k2, sigma_l, rho, beta)
    k4 = lorenz_rhs(state + dt * k3, sigma_l, rho, beta)
    return state + dt * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0


def integrate(cfg: LorenzConfig) -> np.ndarray:
    """
    Integrate the system and return the full (steps, 3) trajectory after the burn-in.

    Raises:
        NonFiniteError: if the state diverges.
    """
    state = np.asarray(cfg.initial, dtype=np.float64)
    out = np.empty((cfg.steps, 3))
    with np.errstate(over='ignore', invalid='ignore'):
        for k in range(cfg.burn_in + cfg.steps):
            state = rk4_step(state, cfg.dt, cfg.sigma_l, cfg.rho, cfg.beta)
            if not np.isfinite(state).all():
                raise NonFiniteError(f"Lorenz state diverged at step {k}")
            if k >= cfg.burn_in:
                out[k - cfg.burn_in] = state
    return out


def lorenz_generate(cfg: LorenzConfig) -> np.ndarray:
    """
    Observed component of the trajectory, rescaled to [-1, 1].

    A constant trajectory (e.g. started at the origin) returns zeros.
    """
    x = integrate(cfg)[:, cfg.component]
    lo, hi = float(x.min()), float(x.max())
    if hi == lo:
        return np.zeros_like(x)
    logger.debug(f"Lorenz component {cfg.component}: range [{lo:.3f}, {hi:.3f}] over {cfg.steps} steps")
    return 2.0 * (x - lo) / (hi - lo) - 1.0


def _clip_occlusions(n: int, occlusions: Sequence[Sequence[int]]) -> List[Tuple[int, int]]:
    clipped = []
    for start, length in occlusions:
        if length < 0:
            raise TensorValueError(f"occlusion length must be >= 0, got {length}")
        lo, hi = max(0, int(start)), min(n, int(start) + int(length))
        if (lo, hi) != (start, start + length):
            logger.warning(f"Occlusion ({start}, {length}) exceeds signal of length {n}; clipped to [{lo}, {hi})")
        if hi > lo:
            clipped.append((lo, hi))
    return clipped


def corrupt_signal(x: np.ndarray, noise_std: float, missing_rate: float,
                   occlusions: Sequence[Sequence[int]] = (), seed: int = 0) -> Tuple[np.ndarray, np.ndarray]:
    """
    Add Gaussian noise, drop a random fraction of samples and occlude blocks.

    Noise is drawn first. Then round(missing_rate·n) indices are dropped uniformly at random
    from outside the occlusions, and every occlusion [start, start+length) is marked missing.
    Missing entries of y are zero; observed entries equal x plus the drawn noise.

    Returns:
        (y, mask) with mask True on observed samples.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise TensorValueError(f"corrupt_signal expects a 1-D signal, got shape {x.shape}")
    if noise_std < 0 or not 0 <= missing_rate < 1:
        raise TensorValueError(f"invalid corruption noise_std={noise_std}, missing_rate={missing_rate}")
    n = x.size
    rng = np.random.default_rng(seed)
    noise = noise_std * rng.standard_normal(n) if noise_std > 0 else np.zeros(n)

    mask = np.ones(n, dtype=bool)
    for lo, hi in _clip_occlusions(n, occlusions):
        mask[lo:hi] = False
    candidates = np.flatnonzero(mask)
    n_drop = min(round(missing_rate * n), candidates.size)
    mask[rng.permutation(candidates)[:n_drop]] = False

    y = np.where(mask, x + noise, 0.0)
    logger.debug(f"Corrupted signal: {n - int(mask.sum())} of {n} samples missing")
    return y, mask
