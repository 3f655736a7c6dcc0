"""Unit tests for mmes/tools/config.py"""
from pathlib import Path

import pytest

from mmes.tools.config import TASK_DEFAULTS, load_config, parse_config
from mmes.utils import ConfigError


def write_toml(tmp_path: Path, text: str) -> Path:
    path = tmp_path / "run.toml"
    path.write_text(text)
    return path


class TestLoadConfig:
    """Tests for reading TOML run files"""

    def test_valid_file(self, tmp_path):
        """Sections are parsed into their models"""
        path = write_toml(tmp_path, """
task = "complete"
input = "img.png"
seed = 3

[degradation]
missing_rate = 0.9

[solver]
max_iters = 50
""")
        cfg = load_config(path)
        assert cfg.task == "complete"
        assert cfg.degradation.missing_rate == 0.9
        scfg = cfg.solver_config()
        assert (scfg.max_iters, scfg.seed, scfg.r, scfg.tau) == (50, 3, 4, (6,))

    def test_overrides(self, tmp_path):
        """Command-line overrides replace file values; None is ignored"""
        path = write_toml(tmp_path, 'task = "complete"\ninput = "img.png"\nseed = 1\n')
        cfg = load_config(path, seed=9, output_dir=str(tmp_path / "o"), task=None)
        assert cfg.seed == 9 and cfg.task == "complete"
        assert cfg.report_path == tmp_path / "o" / "report.jsonl"

    def test_unknown_key(self, tmp_path):
        """Unknown keys are a configuration error"""
        path = write_toml(tmp_path, 'task = "complete"\ninput = "a.png"\ncolour = 1\n')
        with pytest.raises(ConfigError):
            load_config(path)

    def test_invalid_toml(self, tmp_path):
        """Syntax errors are a configuration error"""
        with pytest.raises(ConfigError):
            load_config(write_toml(tmp_path, "task = \n"))

    def test_missing_file(self, tmp_path):
        """Unreadable files are a configuration error"""
        with pytest.raises(ConfigError):
            load_config(tmp_path / "nope.toml")


class TestTaskRules:
    """Tests for per-task defaults and requirements"""

    @pytest.mark.parametrize("task", ["complete", "deblur", "denoise", "toy-lorenz", "manifold-export"])
    def test_task_defaults(self, task):
        """Each task starts from its own protocol settings"""
        data = {"task": task, "input": "x.png", "degradation": {"blur_std": 1.0, "noise_std": 25.0}}
        scfg = parse_config(data).solver_config()
        for key, value in TASK_DEFAULTS[task].items():
            assert getattr(scfg, key) == value

    @pytest.mark.parametrize("factor,rank", [(2, 32), (4, 32), (8, 16)])
    def test_super_resolution_rank(self, factor, rank):
        """The bottleneck depends on the scale factor"""
        cfg = parse_config({"task": "super-resolve", "input": "x.png", "degradation": {"factor": factor}})
        assert cfg.solver_config().r == rank

    def test_solver_section_wins(self):
        """[solver] values override task defaults"""
        cfg = parse_config({"task": "complete", "input": "x.png", "solver": {"r": 8, "tau": [4, 4]}})
        scfg = cfg.solver_config()
        assert (scfg.r, scfg.tau) == (8, (4, 4))

    def test_input_required(self):
        """Image tasks need an input"""
        with pytest.raises(ConfigError):
            parse_config({"task": "complete"})
        assert parse_config({"task": "toy-lorenz"}).input is None

    def test_deblur_needs_width(self):
        """Deblurring needs a blur standard deviation"""
        with pytest.raises(ConfigError):
            parse_config({"task": "deblur", "input": "x.png"})

    def test_super_resolve_factor(self):
        """Only factors 2, 4 and 8 are accepted"""
        with pytest.raises(ConfigError):
            parse_config({"task": "super-resolve", "input": "x.png"})
        with pytest.raises(ConfigError):
            parse_config({"task": "super-resolve", "input": "x.png", "degradation": {"factor": 3}})

    def test_denoise_needs_noise(self):
        """Synthesized denoising needs a noise level"""
        with pytest.raises(ConfigError):
            parse_config({"task": "denoise", "input": "x.png"})

    def test_invalid_solver_key(self):
        """Solver keys are validated when the run file is parsed"""
        with pytest.raises(ConfigError):
            parse_config({"task": "complete", "input": "x.png", "solver": {"momentum": 0.5}})

    def test_unknown_task(self):
        """Tasks outside the fixed list are rejected"""
        with pytest.raises(ConfigError):
            parse_config({"task": "segment", "input": "x.png"})

    def test_sweep_axes(self):
        """Only non-empty sweep lists form axes"""
        cfg = parse_config({"task": "complete", "input": "x.png", "sweep": {"r": [2, 4], "sigma": [0.01]}})
        assert cfg.sweep.axes() == {"r": [2, 4], "sigma": [0.01]}

    def test_rank_bound_single_window(self):
        """A one-value window is broadcast over the image modes before r is checked"""
        with pytest.raises(ConfigError, match="dimension 9"):
            parse_config({"task": "complete", "input": "x.png", "solver": {"tau": 3, "r": 20}})
        assert parse_config({"task": "complete", "input": "x.png", "solver": {"tau": 3, "r": 9}}).solver_config().r == 9

    def test_rank_bound_signal(self):
        """Lorenz windows slide over one mode"""
        with pytest.raises(ConfigError, match="dimension 8"):
            parse_config({"task": "toy-lorenz", "solver": {"tau": 8, "r": 9}})

    def test_rank_bound_waits_for_arrays(self):
        """The order of `.npy` inputs is only known once they are loaded"""
        cfg = parse_config({"task": "complete", "input": "vol.npy", "solver": {"tau": 2, "r": 6}})
        assert cfg.spatial_order is None

    def test_manifold_export_shape(self):
        """Manifold export needs two latents and at most a 2-D window"""
        with pytest.raises(ConfigError, match="r=2"):
            parse_config({"task": "manifold-export", "input": "x.png", "solver": {"r": 3}})
        with pytest.raises(ConfigError, match="r=2"):
            parse_config({"task": "manifold-export", "input": "x.png", "solver": {"tau": [2, 2, 2]}})
