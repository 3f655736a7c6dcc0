"""Unit tests for mmes/tools/metrics.py"""
import math

import numpy as np
import pytest

from mmes.tools.metrics import (
    first_iter_below_mse,
    gaussian_window,
    psnr,
    shuffle_pixels,
    ssim,
    uniform_noise_like,
)
from mmes.tools.solver import TraceRecord
from mmes.utils import ShapeError


def ssim_by_windows(a: np.ndarray, b: np.ndarray) -> float:
    """Direct SSIM: one weighted statistic per 11x11 window"""
    w = gaussian_window()
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    values = []
    for i in range(a.shape[0] - 10):
        for j in range(a.shape[1] - 10):
            pa, pb = a[i:i + 11, j:j + 11], b[i:i + 11, j:j + 11]
            ma, mb = np.sum(w * pa), np.sum(w * pb)
            va = np.sum(w * pa * pa) - ma * ma
            vb = np.sum(w * pb * pb) - mb * mb
            cov = np.sum(w * pa * pb) - ma * mb
            values.append((2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2)))
    return float(np.mean(values))


class TestPsnr:
    """Tests for peak signal-to-noise ratio"""

    def test_identical(self, scene):
        """Identical images give infinity"""
        assert psnr(scene, scene) == math.inf

    def test_closed_form(self):
        """A constant error of 0.1 is 20 dB"""
        assert psnr(np.zeros((4, 4)), np.full((4, 4), 0.1)) == pytest.approx(20.0)

    def test_peak(self):
        """A peak of 2 adds 20·log10(2) dB"""
        a, b = np.zeros(8), np.full(8, 0.1)
        assert psnr(a, b, peak=2.0) - psnr(a, b) == pytest.approx(20 * math.log10(2))

    def test_symmetric(self, rng):
        """psnr(a, b) == psnr(b, a)"""
        a, b = rng.random((5, 5)), rng.random((5, 5))
        assert psnr(a, b) == psnr(b, a)

    def test_shape_mismatch(self):
        """Shapes must agree"""
        with pytest.raises(ShapeError):
            psnr(np.zeros(3), np.zeros(4))


class TestSsim:
    """Tests for structural similarity"""

    def test_identical(self, scene):
        """SSIM of an image with itself is one"""
        assert ssim(scene, scene) == pytest.approx(1.0, abs=1e-12)

    def test_inverted_checkerboard(self):
        """A checkerboard against its inverse scores at most zero"""
        a = (np.indices((16, 16)).sum(axis=0) % 2).astype(float)
        assert ssim(a, 1.0 - a) <= 0.0

    def test_matches_window_oracle(self, rng, scene):
        """Filtered statistics agree with a per-window evaluation"""
        noisy = np.clip(scene + 0.1 * rng.standard_normal(scene.shape), 0, 1)
        assert ssim(scene, noisy) == pytest.approx(ssim_by_windows(scene, noisy), abs=1e-10)

    def test_color_is_channel_mean(self, rng, color_scene):
        """Color SSIM averages the per-channel scores"""
        other = np.clip(color_scene + 0.05 * rng.standard_normal(color_scene.shape), 0, 1)
        per_channel = [ssim(color_scene[..., c], other[..., c]) for c in range(3)]
        assert ssim(color_scene, other) == pytest.approx(np.mean(per_channel))

    def test_small_image(self):
        """Images smaller than the window are rejected"""
        with pytest.raises(ShapeError):
            ssim(np.zeros((8, 8)), np.zeros((8, 8)))


class TestNoiseImpedanceHelpers:
    """Tests for shuffled and noise images and the MSE crossing"""

    def test_shuffle_keeps_pixels(self, color_scene):
        """Shuffling permutes whole pixels"""
        shuffled = shuffle_pixels(color_scene, 4)
        assert shuffled.shape == color_scene.shape
        np.testing.assert_array_equal(
            np.sort(shuffled.reshape(-1, 3), axis=0), np.sort(color_scene.reshape(-1, 3), axis=0))
        assert not np.array_equal(shuffled, color_scene)

    def test_shuffle_deterministic(self, scene):
        """Same seed gives the same permutation"""
        np.testing.assert_array_equal(shuffle_pixels(scene, 9), shuffle_pixels(scene, 9))

    def test_uniform_noise(self, scene):
        """Noise images lie in [0, 1)"""
        noise = uniform_noise_like(scene, 0)
        assert noise.shape == scene.shape
        assert 0.0 <= noise.min() and noise.max() < 1.0

    def test_first_crossing(self):
        """Returns the first traced iteration at or below the MSE threshold"""
        trace = [
            TraceRecord(0, 1.0, 1.0, 5.0, 0.01, 10.0),
            TraceRecord(1, 1.0, 1.0, 5.0, 0.01, None),
            TraceRecord(2, 1.0, 1.0, 5.0, 0.01, 20.0),
            TraceRecord(3, 1.0, 1.0, 5.0, 0.01, 30.0),
        ]
        assert first_iter_below_mse(trace, 0.01) == 2
        assert first_iter_below_mse(trace, 1e-6) is None
