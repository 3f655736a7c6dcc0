"""MMES Task Runners - wire observation, solver, metrics and artifacts for each CLI task

Every runner returns a result dictionary. Failures come back as
{"error": ..., "details": ..., "status": <exit code>} instead of raising.
"""
import asyncio
import itertools
import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Callable, Dict, List, Sequence, Tuple

import numpy as np

from mmes.tools.autoencoder import ae_forward, export_patch_manifold, latent_grid, save_params
from mmes.tools.config import RunConfig, parse_config
from mmes.tools.degradation import Degradation, apply, make_gaussian_kernel, make_random_mask
from mmes.tools.imaging import ColorPatchGenerator, color_reconstruct
from mmes.tools.io import (
    append_report,
    is_array_file,
    load_mask,
    load_signal_csv,
    load_tensor,
    make_report,
    save_image,
    save_mask_csv,
    save_signal_csv,
    save_tensor,
    write_trace_csv,
)
from mmes.tools.lorenz import corrupt_signal, lorenz_generate
from mmes.tools.metrics import psnr, ssim
from mmes.tools.solver import ReconstructionResult, SolverConfig, reconstruct
from mmes.utils import ConfigError, MmesError, NonFiniteError

logger = logging.getLogger('mmes')

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2


def _is_color(shape: Sequence[int]) -> bool:
    return len(shape) == 3 and shape[2] == 3


def _build_degradation(cfg: RunConfig, shape: Tuple[int, ...]) -> Degradation:
    settings = cfg.degradation
    if cfg.task in ("complete", "manifold-export"):
        if settings.mask_path:
            mask = load_mask(settings.mask_path)
            if mask.ndim == 2 and len(shape) == 3:
                mask = np.repeat(mask[:, :, None], shape[2], axis=2)
            if mask.shape != shape:
                raise ConfigError(f"mask {settings.mask_path} has shape {mask.shape}, input has {shape}")
        elif settings.synthesize:
            mask = make_random_mask(shape, settings.missing_rate, settings.mask_seed, settings.per_pixel)
        else:
            raise ConfigError("completion of a given observation needs degradation.mask_path")
        return Degradation.masked(mask)
    if cfg.task == "super-resolve":
        return Degradation.downsampled(settings.factor)
    if cfg.task == "deblur":
        return Degradation.blurred(make_gaussian_kernel(settings.blur_std, settings.blur_radius, ndim=2))
    return Degradation.identity()


def prepare_observation(cfg: RunConfig) -> Tuple[np.ndarray, Degradation, np.ndarray | None]:
    """
    Load the input and build (observation, operator, reference).

    With synthesize=true the input is the ground truth: the operator is applied, optional Gaussian
    noise (std on the 0-255 scale) is added and missing entries are zeroed. Otherwise the input is
    already the observation.
    """
    settings = cfg.degradation
    x_in = load_tensor(cfg.input)
    reference = load_tensor(cfg.reference) if cfg.reference else None
    if not settings.synthesize:
        shape = x_in.shape
        if cfg.task == "super-resolve":
            shape = Degradation.downsampled(settings.factor).input_shape(x_in.shape)
        return x_in, _build_degradation(cfg, tuple(shape)), reference

    f = _build_degradation(cfg, x_in.shape)
    y = apply(f, x_in)
    if settings.noise_std > 0:
        rng = np.random.default_rng(settings.noise_seed)
        y = y + (settings.noise_std / 255.0) * rng.standard_normal(y.shape)
        if f.kind == "mask":
            y = np.where(f.mask, y, 0.0)
    return y, f, x_in if reference is None else reference


def _solve(y: np.ndarray, f: Degradation, scfg: SolverConfig, reference: np.ndarray | None) -> ReconstructionResult:
    shape = f.input_shape(y.shape)
    color = _is_color(shape)
    try:
        scfg.check_rank(2 if color else len(shape))
    except ValueError as e:
        raise ConfigError(str(e)) from e
    if color:
        return color_reconstruct(y, f, scfg, reference=reference)
    return reconstruct(y, f, scfg, reference=reference)


def _quality(x_hat: np.ndarray, reference: np.ndarray | None) -> Tuple[float | None, float | None]:
    if reference is None:
        return None, None
    value = psnr(x_hat, reference)
    score = None
    if x_hat.ndim in (2, 3) and min(x_hat.shape[:2]) >= 11 and (x_hat.ndim == 2 or x_hat.shape[2] in (1, 3)):
        score = ssim(x_hat, reference)
    return value, score


def _checkpoint(result: ReconstructionResult, path: Path) -> Path:
    gen = result.generator
    extras = {"Z": result.z}
    if isinstance(gen, ColorPatchGenerator):
        extras["color_matrix"] = gen.params.color_matrix
        extras["color_bias"] = gen.params.color_bias
    return save_params(path, gen.ae, extras)


def _image_task(cfg: RunConfig) -> Dict[str, Any]:
    y, f, reference = prepare_observation(cfg)
    scfg = cfg.solver_config()
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    suffix = ".npy" if is_array_file(cfg.input) else ".png"

    result = _solve(y, f, scfg, reference)
    value, score = _quality(result.x_hat, reference)
    artifacts = {
        "observation": str(save_tensor(y, out / f"observation{suffix}")),
        "reconstruction": str(save_tensor(result.x_hat, out / f"reconstruction{suffix}")),
        "trace": str(write_trace_csv(result.trace, out / "trace.csv")),
        "checkpoint": str(_checkpoint(result, out / "checkpoint.npz")),
    }
    if result.best is not None:
        artifacts["best"] = str(save_tensor(result.best.x, out / f"best{suffix}"))
    record = make_report(cfg.task, str(cfg.input), value, score, result.iterations, result.seconds,
                         tau=list(result.generator.tau.tau), r=scfg.r, sigma=scfg.sigma)
    return {"task": cfg.task, "artifacts": artifacts, "psnr_db": value, "ssim": score,
            "iterations": result.iterations, "seconds": result.seconds, "report_record": record}


def _lorenz_task(cfg: RunConfig) -> Dict[str, Any]:
    settings = cfg.lorenz
    truth = load_signal_csv(cfg.input) if cfg.input else lorenz_generate(settings.system())
    y, mask = corrupt_signal(truth, settings.noise_std, settings.missing_rate, settings.occlusions, settings.corruption_seed)
    f = Degradation.masked(mask)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    artifacts = {
        "truth": str(save_signal_csv(truth, out / "truth.csv")),
        "observation": str(save_signal_csv(y, out / "observation.csv")),
        "mask": str(save_mask_csv(mask, out / "mask.csv")),
    }

    variants = {"manifold": cfg.solver_config()}
    if settings.compare_linear:
        variants["linear"] = cfg.solver_config(linear=True)
    mse: Dict[str, float] = {}
    value = None
    iterations, seconds = 0, 0.0
    for name, scfg in variants.items():
        result = reconstruct(y, f, scfg, reference=truth)
        mse[name] = float(np.mean((result.x_hat - truth) ** 2))
        if name == "manifold":
            # Signals live in [-1, 1]
            value = psnr(result.x_hat, truth, peak=2.0)
        artifacts[f"reconstruction_{name}"] = str(save_signal_csv(result.x_hat, out / f"reconstruction_{name}.csv"))
        artifacts[f"trace_{name}"] = str(write_trace_csv(result.trace, out / f"trace_{name}.csv"))
        iterations, seconds = max(iterations, result.iterations), seconds + result.seconds
        logger.info(f"Lorenz {name} model: MSE {mse[name]:.6g}")
    record = make_report(cfg.task, str(cfg.input or "lorenz"), value, None, iterations, seconds,
                         mse=mse["manifold"], mse_linear=mse.get("linear"))
    return {"task": cfg.task, "artifacts": artifacts, "mse": mse, "psnr_db": value, "ssim": None,
            "iterations": iterations, "seconds": seconds, "report_record": record}


def _manifold_task(cfg: RunConfig) -> Dict[str, Any]:
    y, f, reference = prepare_observation(cfg)
    if y.ndim == 3:
        logger.warning("manifold-export models grayscale patches; averaging the color channels")
        y, reference = y.mean(axis=2), None if reference is None else reference.mean(axis=2)
        f = Degradation.masked(f.mask.all(axis=2)) if f.kind == "mask" else f
    scfg = cfg.solver_config()
    if scfg.r != 2 or len(scfg.tau) > 2:
        raise ConfigError(f"manifold export needs r=2 and a 2-D window, got r={scfg.r}, tau={scfg.tau}")
    result = reconstruct(y, f, scfg, reference=reference)
    gen = result.generator
    latent = ae_forward(gen.ae, gen.embed(result.z)).latent
    montage = export_patch_manifold(gen.ae, latent_grid(latent, cfg.export.grid), gen.tau.tau)
    lo, hi = float(montage.min()), float(montage.max())
    montage = (montage - lo) / (hi - lo) if hi > lo else np.zeros_like(montage)

    out = Path(cfg.output_dir)
    artifacts = {
        "montage": str(save_image(montage, out / "manifold.png")),
        "reconstruction": str(save_image(result.x_hat, out / "reconstruction.png")),
        "trace": str(write_trace_csv(result.trace, out / "trace.csv")),
        "checkpoint": str(_checkpoint(result, out / "checkpoint.npz")),
    }
    value, score = _quality(result.x_hat, reference)
    record = make_report(cfg.task, str(cfg.input), value, score, result.iterations, result.seconds,
                         grid=cfg.export.grid)
    return {"task": cfg.task, "artifacts": artifacts, "montage_shape": list(montage.shape), "psnr_db": value,
            "ssim": score, "iterations": result.iterations, "seconds": result.seconds, "report_record": record}


_RUNNERS: Dict[str, Callable[[RunConfig], Dict[str, Any]]] = {
    "complete": _image_task,
    "super-resolve": _image_task,
    "deblur": _image_task,
    "denoise": _image_task,
    "toy-lorenz": _lorenz_task,
    "manifold-export": _manifold_task,
}


def run_task(cfg: RunConfig, write_report: bool = True) -> Dict[str, Any]:
    """
    Run one configured task end to end.

    Args:
        cfg: Validated run configuration.
        write_report: Append the metric report line to cfg.report_path (the sweep harness writes it instead).

    Returns:
        Dictionary with status 0, the artifacts and metrics; or an error dictionary with status 1 or 2.
    """
    logger.info(f"Task called: {cfg.task} with input={cfg.input}, output_dir={cfg.output_dir}, seed={cfg.seed}")
    try:
        result = _RUNNERS[cfg.task](cfg)
        if write_report:
            append_report(result["report_record"], cfg.report_path)
            result["report"] = str(cfg.report_path)
    except ConfigError as e:
        logger.error(f"Invalid configuration for {cfg.task}: {e}")
        return {"error": "Invalid configuration", "details": str(e), "status": EXIT_CONFIG}
    except NonFiniteError as e:
        logger.error(f"{cfg.task} diverged after {len(e.trace)} traced iterations: {e}")
        if e.trace:
            write_trace_csv(e.trace, Path(cfg.output_dir) / "trace_partial.csv")
        return {"error": f"{cfg.task} diverged", "details": str(e), "status": EXIT_RUNTIME}
    except (MmesError, OSError) as e:
        logger.error(f"Error running {cfg.task}: {e}")
        return {"error": f"{cfg.task} failed", "details": str(e), "status": EXIT_RUNTIME}
    except Exception as e:
        logger.exception(f"Unexpected error running {cfg.task}")
        return {"error": f"{cfg.task} failed", "details": f"{type(e).__name__}: {e}", "status": EXIT_RUNTIME}
    result["status"] = EXIT_OK
    return result


def expand_sweep(cfg: RunConfig) -> List[RunConfig]:
    """
    Cartesian product of the [sweep] lists, one validated RunConfig per combination.

    Runs write into numbered sub-directories of output_dir and share one report file.
    """
    if cfg.sweep is None or not cfg.sweep.axes():
        return [cfg]
    axes = cfg.sweep.axes()
    names = list(axes)
    runs = []
    for k, values in enumerate(itertools.product(*(axes[n] for n in names))):
        data = cfg.model_dump(exclude={"sweep"})
        data["output_dir"] = str(Path(cfg.output_dir) / f"run_{k:03d}")
        data["report"] = str(cfg.report_path)
        for name, value in zip(names, values):
            if name == "missing_rate":
                data["degradation"]["missing_rate"] = value
            else:
                data["solver"][name] = value
        runs.append(parse_config(data))
    logger.info(f"Sweep over {names}: {len(runs)} runs")
    return runs


def _sweep_run(cfg: RunConfig) -> Dict[str, Any]:
    return run_task(cfg, write_report=False)


async def run_sweep(cfg: RunConfig, workers: int | None = None) -> List[Dict[str, Any]]:
    """
    Execute every sweep combination concurrently and append their reports through one writer.

    Args:
        cfg: Configuration with a [sweep] section.
        workers: Process count; defaults to sweep.workers. One worker runs in the default executor.

    Returns:
        Result dictionaries in sweep order.
    """
    runs = expand_sweep(cfg)
    workers = workers or (cfg.sweep.workers if cfg.sweep else 1)
    loop = asyncio.get_running_loop()
    lock = asyncio.Lock()
    executor = ProcessPoolExecutor(max_workers=workers) if workers > 1 else None

    async def one(run: RunConfig) -> Dict[str, Any]:
        result = await loop.run_in_executor(executor, _sweep_run, run)
        if result.get("status") == EXIT_OK:
            async with lock:
                append_report(result["report_record"], run.report_path)
            result["report"] = str(run.report_path)
        return result

    try:
        if executor is None:
            # Sequential so traces stay bitwise reproducible at one worker
            return [await one(run) for run in runs]
        return list(await asyncio.gather(*(one(run) for run in runs)))
    finally:
        if executor is not None:
            executor.shutdown()
