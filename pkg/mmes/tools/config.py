"""MMES Run Configuration - TOML files validated into pydantic models

A run file has top-level keys (task, input, reference, output_dir, report, seed) and the
sections [degradation], [solver], [lorenz], [export] and [sweep]. Unknown keys are rejected.
"""
import logging
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from mmes.tools.degradation import LANCZOS_FACTORS
from mmes.tools.io import is_array_file
from mmes.tools.lorenz import LorenzConfig
from mmes.tools.solver import SolverConfig
from mmes.utils import ConfigError

logger = logging.getLogger('mmes')

TASKS = ("complete", "super-resolve", "deblur", "denoise", "toy-lorenz", "manifold-export")
Task = Literal["complete", "super-resolve", "deblur", "denoise", "toy-lorenz", "manifold-export"]

# Per-task hyperparameters of the published protocols
TASK_DEFAULTS: Dict[str, Dict[str, Any]] = {
    "complete": {"tau": (6,), "r": 4, "sigma": 0.05},
    "super-resolve": {"tau": (6,), "r": 32, "sigma": 0.1},
    "deblur": {"tau": (4,), "r": 16, "sigma": 0.01, "hidden_scale": 32},
    "denoise": {"tau": (6,), "r": 36, "sigma": 0.05},
    "toy-lorenz": {"tau": (64,), "r": 3, "sigma": 0.05},
    "manifold-export": {"tau": (8, 8), "r": 2, "sigma": 0.05},
}
SUPER_RESOLVE_RANK = {2: 32, 4: 32, 8: 16}


class DegradationSpec(BaseModel):
    """How the observation is built or read."""

    model_config = ConfigDict(extra="forbid")

    missing_rate: float = Field(0.5, ge=0, lt=1)
    mask_seed: int = 0
    per_pixel: bool = False
    mask_path: Optional[str] = None
    factor: Optional[int] = None
    blur_std: Optional[float] = Field(None, gt=0)
    blur_radius: Optional[int] = Field(None, ge=0)
    noise_std: float = Field(0.0, ge=0)
    noise_seed: int = 0
    synthesize: bool = True

    @field_validator("factor")
    @classmethod
    def _known_factor(cls, value: Optional[int]) -> Optional[int]:
        if value is not None and value not in LANCZOS_FACTORS:
            raise ValueError(f"factor must be one of {LANCZOS_FACTORS}")
        return value


class LorenzSection(LorenzConfig):
    """Lorenz system settings plus the corruption applied to the generated trace."""

    noise_std: float = Field(0.1, ge=0)
    missing_rate: float = Field(0.1, ge=0, lt=1)
    occlusions: List[Tuple[int, int]] = [(300, 100), (900, 100), (1500, 100)]
    corruption_seed: int = 0
    compare_linear: bool = True

    def system(self) -> LorenzConfig:
        return LorenzConfig(**self.model_dump(include=set(LorenzConfig.model_fields)))


class ExportSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    grid: int = Field(16, ge=2)


class SweepSpec(BaseModel):
    """Lists whose Cartesian product defines independent runs."""

    model_config = ConfigDict(extra="forbid")

    tau: Optional[List[int]] = None
    r: Optional[List[int]] = None
    sigma: Optional[List[float]] = None
    missing_rate: Optional[List[float]] = None
    workers: int = Field(1, ge=1)

    def axes(self) -> Dict[str, List[Any]]:
        return {k: v for k, v in self.model_dump(exclude={"workers"}).items() if v}


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    task: Task
    input: Optional[str] = None
    reference: Optional[str] = None
    output_dir: str = "out"
    report: Optional[str] = None
    seed: int = 0
    degradation: DegradationSpec = DegradationSpec()
    solver: Dict[str, Any] = {}
    lorenz: LorenzSection = LorenzSection()
    export: ExportSpec = ExportSpec()
    sweep: Optional[SweepSpec] = None

    @model_validator(mode="after")
    def _task_requirements(self) -> "RunConfig":
        if self.task != "toy-lorenz" and not self.input:
            raise ValueError(f"task '{self.task}' needs an input path")
        if self.task == "super-resolve" and self.degradation.factor is None:
            raise ValueError("super-resolve needs degradation.factor")
        if self.task == "deblur" and self.degradation.blur_std is None:
            raise ValueError("deblur needs degradation.blur_std")
        if self.task == "denoise" and self.degradation.synthesize and self.degradation.noise_std <= 0:
            raise ValueError("denoise with synthesize=true needs degradation.noise_std > 0")
        scfg = self.solver_config()
        if self.task == "manifold-export" and (scfg.r != 2 or len(scfg.tau) > 2):
            raise ValueError(f"manifold-export needs r=2 and a 2-D window, got r={scfg.r}, tau={scfg.tau}")
        order = self.spatial_order
        if order is not None:
            scfg.check_rank(order)
        return self

    @property
    def spatial_order(self) -> Optional[int]:
        """Number of modes the window slides over, when the run file alone determines it."""
        if self.task == "toy-lorenz":
            return 1
        if self.task == "manifold-export" or not is_array_file(self.input):
            return 2
        return None

    @property
    def report_path(self) -> Path:
        return Path(self.report) if self.report else Path(self.output_dir) / "report.jsonl"

    def solver_config(self, **overrides: Any) -> SolverConfig:
        """Task defaults, then the [solver] section, then the run seed and explicit overrides."""
        merged: Dict[str, Any] = dict(TASK_DEFAULTS[self.task])
        if self.task == "super-resolve" and self.degradation.factor is not None:
            merged["r"] = SUPER_RESOLVE_RANK[self.degradation.factor]
        merged.update(self.solver)
        merged["seed"] = self.seed
        merged.update(overrides)
        try:
            return SolverConfig(**merged)
        except ValidationError as e:
            raise ValueError(f"invalid [solver] section: {e}") from e


def parse_config(data: Dict[str, Any]) -> RunConfig:
    """Validate a configuration dictionary, raising ConfigError with the pydantic details."""
    try:
        return RunConfig(**data)
    except ValidationError as e:
        raise ConfigError(str(e)) from e


def load_config(path: str | Path, **overrides: Any) -> RunConfig:
    """
    Read and validate a TOML run file.

    Args:
        path: Configuration file.
        overrides: Top-level keys (e.g. task, seed, output_dir) that replace values from the file.

    Raises:
        ConfigError: if the file cannot be read, is not valid TOML or fails validation.
    """
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path} is not valid TOML: {e}") from e
    data.update({k: v for k, v in overrides.items() if v is not None})
    cfg = parse_config(data)
    logger.debug(f"Loaded config {path}: task={cfg.task}, seed={cfg.seed}")
    return cfg
