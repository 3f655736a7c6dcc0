"""Shared fixtures for the mmes test suite"""
import numpy as np
import pytest

from mmes.tools.solver import SolverConfig


def make_scene(size: int = 32) -> np.ndarray:
    """Piecewise-smooth grayscale test image in [0, 1]: shaded background, a bright square and a disc."""
    i, j = np.mgrid[0:size, 0:size] / size
    img = 0.3 + 0.2 * np.sin(2 * np.pi * i) * np.cos(np.pi * j)
    img[size // 8: size // 2, size // 8: size // 2] = 0.85
    disc = (i - 0.7) ** 2 + (j - 0.65) ** 2 < 0.04
    img[disc] = 0.1
    return np.clip(img, 0.0, 1.0)


@pytest.fixture
def rng():
    """Seeded generator so every test draws the same data"""
    return np.random.default_rng(1234)


@pytest.fixture
def scene():
    """32x32 grayscale scene"""
    return make_scene(32)


@pytest.fixture
def color_scene():
    """16x16x3 color scene built from shifted grayscale scenes"""
    base = make_scene(16)
    return np.stack([base, np.roll(base, 2, axis=0), 1.0 - base], axis=-1)


@pytest.fixture
def tiny_cfg():
    """Small solver settings for fast end-to-end runs"""
    return SolverConfig(tau=(3,), r=2, hidden_scale=2, sigma=0.05, max_iters=5, checkpoint_cadence=2)
