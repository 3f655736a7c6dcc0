"""Unit tests for mmes/tools/autoencoder.py"""
import numpy as np
import pytest

from mmes.tools.autoencoder import (
    AdamState,
    MlpParams,
    adam_step,
    add_noise,
    ae_backward,
    ae_forward,
    decode,
    export_patch_manifold,
    hidden_chain,
    init_params,
    latent_grid,
    load_params,
    sample_noise,
    save_params,
    validate_chain,
)
from mmes.utils import MissingCacheError, NonFiniteError, ShapeError, TensorValueError


def numeric_grad(loss, arr, idx, step=1e-6):
    """Central difference of loss() with respect to arr[idx]"""
    old = arr[idx]
    arr[idx] = old + step
    up = loss()
    arr[idx] = old - step
    down = loss()
    arr[idx] = old
    return (up - down) / (2 * step)


class TestChain:
    """Tests for layer chain validation and defaults"""

    def test_default_chain(self):
        """Default chain is [D, 8D, r, 8D, D]"""
        assert hidden_chain(64, 2) == [64, 512, 2, 512, 64]
        assert hidden_chain(16, 4, scale=32) == [16, 512, 4, 512, 16]

    def test_linear_chain(self):
        """Linear baseline uses [D, r, D]"""
        assert hidden_chain(64, 3, linear=True) == [64, 3, 64]

    @pytest.mark.parametrize("dims", [[4, 2], [4, 2, 3], [4, 6, 2, 5, 4], [4, 5, 4]])
    def test_invalid_chains(self, dims):
        """Even-length, asymmetric or widening chains are rejected"""
        with pytest.raises(ShapeError):
            validate_chain(dims)

    def test_full_rank_bottleneck(self):
        """r = D needs hidden layers or the linear baseline"""
        with pytest.raises(ShapeError):
            validate_chain([4, 4, 4])
        validate_chain([4, 4, 4], linear=True)
        validate_chain([36, 288, 36, 288, 36])


class TestInitAndForward:
    """Tests for initialization and the forward pass"""

    def test_init_deterministic(self):
        """Same seed gives bitwise-identical parameters"""
        a = init_params([8, 16, 2, 16, 8], 3)
        b = init_params([8, 16, 2, 16, 8], 3)
        for wa, wb in zip(a.weights, b.weights):
            np.testing.assert_array_equal(wa, wb)

    def test_init_bounds(self):
        """Weights lie within the Glorot bound; biases are zero"""
        p = init_params([64, 512, 2, 512, 64], 0)
        for w, b in zip(p.weights, p.biases):
            assert np.abs(w).max() <= np.sqrt(6.0 / sum(w.shape))
            assert not b.any()
        assert p.activations == ["leaky_relu", "leaky_relu", "leaky_relu", "none"]
        assert p.r == 2

    def test_zero_parameters(self):
        """All-zero network outputs zeros"""
        p = init_params([6, 3, 6], 0)
        for w in p.weights:
            w[...] = 0
        out = ae_forward(p, np.ones((6, 5)))
        np.testing.assert_array_equal(out.output, 0)
        assert out.latent.shape == (3, 5)

    def test_linear_identity(self, rng):
        """Linear baseline with identity layers reproduces its input"""
        p = MlpParams([np.eye(4), np.eye(4)], [np.zeros(4), np.zeros(4)], ["none", "none"])
        h = rng.standard_normal((4, 7))
        np.testing.assert_array_equal(ae_forward(p, h).output, h)

    def test_per_column_oracle(self, rng):
        """Forward matches an independent per-column evaluation"""
        p = init_params([5, 9, 2, 9, 5], rng)
        h = rng.standard_normal((5, 6))
        out = ae_forward(p, h).output
        for t in range(6):
            a = h[:, t]
            for w, b, act in zip(p.weights, p.biases, p.activations):
                z = w @ a + b
                a = np.where(z > 0, z, 0.2 * z) if act == "leaky_relu" else z
            np.testing.assert_allclose(out[:, t], a, atol=1e-12)

    def test_column_permutation(self, rng):
        """Permuting input columns permutes output columns"""
        p = init_params([5, 9, 2, 9, 5], rng)
        h = rng.standard_normal((5, 6))
        perm = rng.permutation(6)
        np.testing.assert_allclose(ae_forward(p, h[:, perm]).output, ae_forward(p, h).output[:, perm], atol=1e-14)

    def test_linear_rank(self, rng):
        """Linear baseline output has rank at most r"""
        p = init_params([8, 2, 8], rng, linear=True)
        sv = np.linalg.svd(ae_forward(p, rng.standard_normal((8, 20))).output, compute_uv=False)
        assert np.all(sv[2:] < 1e-10)

    def test_dimension_mismatch(self):
        """Input row count must equal the input width"""
        with pytest.raises(ShapeError):
            ae_forward(init_params([6, 3, 6], 0), np.zeros((5, 2)))


class TestBackward:
    """Tests for reverse-mode gradients"""

    def test_zero_upstream(self, rng):
        """Zero upstream gradient gives zero gradients"""
        p = init_params([5, 9, 2, 9, 5], rng)
        fwd = ae_forward(p, rng.standard_normal((5, 4)))
        grads, g_in = ae_backward(p, fwd, np.zeros((5, 4)))
        assert all(not g.any() for g in grads.values())
        assert not g_in.any()

    def test_finite_differences(self, rng):
        """Every parameter and the input match central differences"""
        p = init_params([6, 10, 3, 10, 6], rng)
        for b in p.biases:
            b[...] = 0.1 * rng.standard_normal(b.shape)
        h = rng.standard_normal((6, 5))
        weights = rng.standard_normal((6, 5))

        def loss():
            return float(np.sum(weights * ae_forward(p, h).output))

        grads, g_in = ae_backward(p, ae_forward(p, h), weights)
        params = {**p.named(), "h": h}
        analytic = {**grads, "h": g_in}
        for name, arr in params.items():
            for _ in range(4):
                idx = tuple(int(rng.integers(0, n)) for n in arr.shape)
                num = numeric_grad(loss, arr, idx)
                assert abs(num - analytic[name][idx]) <= 1e-5 * max(1.0, abs(num))

    def test_least_squares_gradient(self, rng):
        """Single linear layer with squared loss gives 2(Wh - y)h^T"""
        w = rng.standard_normal((3, 3))
        p = MlpParams([w], [np.zeros(3)], ["none"])
        h = rng.standard_normal((3, 4))
        y = rng.standard_normal((3, 4))
        fwd = ae_forward(p, h)
        grads, _ = ae_backward(p, fwd, 2 * (fwd.output - y))
        np.testing.assert_allclose(grads["W0"], 2 * (w @ h - y) @ h.T, atol=1e-12)

    def test_missing_cache(self):
        """Backward without a forward cache is rejected"""
        p = init_params([6, 3, 6], 0)
        with pytest.raises(MissingCacheError):
            ae_backward(p, None, np.zeros((6, 2)))


class TestNoise:
    """Tests for denoising-input noise"""

    def test_sigma_zero(self, rng):
        """sigma=0 leaves the input unchanged"""
        h = rng.standard_normal((4, 3))
        np.testing.assert_array_equal(add_noise(h, 0.0, rng), h)

    def test_statistics(self):
        """Sample mean and std are within 1% of (0, sigma)"""
        e = sample_noise((1000, 1000), 0.05, np.random.default_rng(0))
        assert abs(e.mean()) < 0.01 * 0.05
        assert abs(e.std() - 0.05) < 0.01 * 0.05

    def test_reproducible(self):
        """Same stream state gives the same draw"""
        a = sample_noise((3, 3), 0.1, np.random.default_rng(5))
        b = sample_noise((3, 3), 0.1, np.random.default_rng(5))
        np.testing.assert_array_equal(a, b)

    def test_negative_sigma(self, rng):
        """Negative noise level is rejected"""
        with pytest.raises(TensorValueError):
            sample_noise((2, 2), -0.1, rng)


class TestAdam:
    """Tests for the Adam optimizer"""

    def test_zero_gradient(self):
        """g=0 at t=1 leaves parameters unchanged"""
        params = {"w": np.array([1.0, -2.0])}
        adam_step(AdamState(lr=0.1), params, {"w": np.zeros(2)})
        np.testing.assert_array_equal(params["w"], [1.0, -2.0])

    def test_hand_evaluation(self):
        """theta=1, g=2, lr=0.1 gives 1 - 0.1*2/(2+1e-8)"""
        params = {"w": np.array([1.0])}
        state = adam_step(AdamState(lr=0.1), params, {"w": np.array([2.0])})
        assert params["w"][0] == pytest.approx(1 - 0.1 * 2 / (2 + 1e-8), abs=1e-15)
        assert state.t == 1

    def test_two_steps_scalar_reference(self):
        """Two steps with constant g match a scalar implementation"""
        params = {"w": np.array([0.5])}
        state = AdamState(lr=0.01)
        for _ in range(2):
            adam_step(state, params, {"w": np.array([3.0])})
        theta, m, v = 0.5, 0.0, 0.0
        for t in (1, 2):
            m = 0.9 * m + (1 - 0.9) * 3.0
            v = 0.999 * v + (1 - 0.999) * 9.0
            theta -= 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        assert params["w"][0] == pytest.approx(theta, abs=1e-15)

    def test_non_finite_gradient(self):
        """NaN gradients abort without touching any parameter"""
        params = {"a": np.array([1.0]), "b": np.array([2.0])}
        with pytest.raises(NonFiniteError) as exc:
            adam_step(AdamState(), params, {"a": np.array([0.5]), "b": np.array([np.nan])})
        assert exc.value.name == "b"
        assert params["a"][0] == 1.0

    def test_name_mismatch(self):
        """Parameter and gradient names must agree"""
        with pytest.raises(ShapeError):
            adam_step(AdamState(), {"a": np.zeros(1)}, {"b": np.zeros(1)})


class TestManifoldExport:
    """Tests for latent lattices and patch montages"""

    def test_latent_grid(self):
        """Lattice spans the bounding box of the codes"""
        latent = np.array([[0.0, 1.0, 0.5], [-1.0, 1.0, 0.0]])
        grid = latent_grid(latent, 3)
        assert grid.shape == (3, 3, 2)
        np.testing.assert_array_equal(grid[0, 0], [0.0, -1.0])
        np.testing.assert_array_equal(grid[2, 2], [1.0, 1.0])

    def test_single_tile(self, rng):
        """1x1 grid gives one decoded patch"""
        p = init_params([4, 8, 2, 8, 4], rng)
        point = np.array([[[0.3, -0.2]]])
        montage = export_patch_manifold(p, point, (2, 2))
        np.testing.assert_allclose(montage, decode(p, point.reshape(1, 2).T).reshape(2, 2), atol=1e-14)

    def test_tiles_in_lattice_order(self, rng):
        """Tile (i, j) equals the decoded grid[i, j]"""
        p = init_params([6, 8, 2, 8, 6], rng)
        grid = rng.standard_normal((3, 4, 2))
        montage = export_patch_manifold(p, grid, (2, 3))
        assert montage.shape == (6, 12)
        for i in range(3):
            for j in range(4):
                patch = decode(p, grid[i, j][:, None])[:, 0].reshape(2, 3)
                np.testing.assert_allclose(montage[2 * i: 2 * i + 2, 3 * j: 3 * j + 3], patch, atol=1e-14)

    def test_r_mismatch(self, rng):
        """Grid points must have r coordinates"""
        p = init_params([4, 8, 2, 8, 4], rng)
        with pytest.raises(ShapeError):
            export_patch_manifold(p, np.zeros((2, 2, 3)), (2, 2))


class TestCheckpoint:
    """Tests for parameter checkpoints"""

    def test_save_load(self, tmp_path, rng):
        """Parameters and extras survive a checkpoint"""
        p = init_params([4, 8, 2, 8, 4], rng)
        z = rng.standard_normal((5, 5))
        path = save_params(tmp_path / "ckpt.npz", p, {"Z": z})
        loaded, extras = load_params(path)
        assert loaded.dims == p.dims
        assert loaded.activations == p.activations
        for a, b in zip(loaded.weights, p.weights):
            np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(extras["Z"], z)

    def test_wrong_version(self, tmp_path, rng):
        """Unknown format versions are rejected"""
        p = init_params([4, 2, 4], rng)
        path = save_params(tmp_path / "ckpt.npz", p)
        with np.load(path) as data:
            payload = {k: data[k] for k in data.files}
        payload["format_version"] = np.array([99])
        np.savez(tmp_path / "bad.npz", **payload)
        with pytest.raises(TensorValueError):
            load_params(tmp_path / "bad.npz")
