"""MMES I/O Tools - images, signals, masks, traces and metric reports"""
import csv
import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List, Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

from mmes.utils import DataFormatError

logger = logging.getLogger('mmes')

TRACE_HEADER = ("iter", "l_rec", "l_ae", "lambda", "lr", "psnr")
REPORT_KEYS = ("task", "image", "psnr_db", "ssim", "iters", "seconds")


def load_image(path: str | Path) -> np.ndarray:
    """
    Read an 8-bit grayscale or RGB PNG/PGM/PPM into [0, 1].

    Returns:
        (H, W) array for grayscale files, (H, W, 3) for color files.

    Raises:
        DataFormatError: if the file cannot be read or is not 8 bits per sample.
    """
    try:
        with Image.open(path) as img:
            img.load()
            mode = img.mode
            if mode == "P":
                img = img.convert("RGB")
                mode = "RGB"
            if mode not in ("L", "RGB"):
                raise DataFormatError(f"{path}: unsupported image mode '{mode}' (need 8-bit L or RGB)")
            arr = np.asarray(img, dtype=np.float64) / 255.0
    except (OSError, UnidentifiedImageError) as e:
        raise DataFormatError(f"cannot read image {path}: {e}") from e
    logger.debug(f"Loaded image {path} with shape {arr.shape}")
    return arr


def to_uint8(x: np.ndarray) -> np.ndarray:
    return np.round(np.clip(x, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_image(x: np.ndarray, path: str | Path) -> Path:
    """Clamp to [0, 1], quantize by round(255·v) and write; the format follows the file suffix."""
    path = Path(path)
    if x.ndim == 3 and x.shape[2] == 1:
        x = x[..., 0]
    if not (x.ndim == 2 or (x.ndim == 3 and x.shape[2] == 3)):
        raise DataFormatError(f"cannot save a tensor of shape {x.shape} as an image")
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(x)).save(path)
    logger.debug(f"Saved image {path}")
    return path


def is_array_file(path: str | Path) -> bool:
    return Path(path).suffix.lower() == ".npy"


def load_tensor(path: str | Path) -> np.ndarray:
    """Image files via load_image; `.npy` files hold N-way tensors (e.g. volumes) already in [0, 1]."""
    if not is_array_file(path):
        return load_image(path)
    try:
        arr = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as e:
        raise DataFormatError(f"cannot read array {path}: {e}") from e
    if not np.issubdtype(arr.dtype, np.number):
        raise DataFormatError(f"{path}: array dtype {arr.dtype} is not numeric")
    return arr.astype(np.float64)


def save_tensor(x: np.ndarray, path: str | Path) -> Path:
    """Counterpart of load_tensor: `.npy` keeps full precision, other suffixes are written as images."""
    path = Path(path)
    if not is_array_file(path):
        return save_image(x, path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.save(path, np.asarray(x, dtype='<f8'))
    return path


def load_mask(path: str | Path) -> np.ndarray:
    """Observation mask from a `.csv` (0/1), a `.npy` array or an 8-bit image."""
    suffix = Path(path).suffix.lower()
    if suffix == ".csv":
        return load_mask_csv(path)
    if suffix == ".npy":
        return load_tensor(path) != 0
    return load_mask_image(path)


def load_mask_image(path: str | Path) -> np.ndarray:
    """8-bit mask image: 0 is missing, 255 is observed (threshold at 128)."""
    return load_image(path) >= 128 / 255.0


def save_mask_image(mask: np.ndarray, path: str | Path) -> Path:
    return save_image(np.asarray(mask, dtype=np.float64), path)


def _read_column(path: str | Path) -> np.ndarray:
    try:
        lines = [line.strip() for line in Path(path).read_text().splitlines() if line.strip()]
    except OSError as e:
        raise DataFormatError(f"cannot read {path}: {e}") from e
    if lines:
        try:
            float(lines[0].split(",")[0])
        except ValueError:
            lines = lines[1:]
    try:
        return np.array([float(line.split(",")[0]) for line in lines], dtype=np.float64)
    except ValueError as e:
        raise DataFormatError(f"{path}: non-numeric value ({e})") from e


def load_signal_csv(path: str | Path) -> np.ndarray:
    """One value per line; a non-numeric first line is treated as a header."""
    x = _read_column(path)
    if x.size == 0:
        raise DataFormatError(f"{path} holds no samples")
    return x


def save_signal_csv(x: np.ndarray, path: str | Path, header: str = "value") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(header + "\n")
        for v in np.ravel(x):
            fh.write(repr(float(v)) + "\n")
    return path


def load_mask_csv(path: str | Path) -> np.ndarray:
    """0/1 mask, one entry per line."""
    values = _read_column(path)
    if not np.isin(values, (0.0, 1.0)).all():
        raise DataFormatError(f"{path}: mask entries must be 0 or 1")
    return values.astype(bool)


def save_mask_csv(mask: np.ndarray, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write("observed\n")
        for v in np.ravel(mask):
            fh.write("1\n" if v else "0\n")
    return path


def _fmt(value: float | None) -> str:
    return "" if value is None else repr(float(value))


def write_trace_csv(trace: Iterable, path: str | Path) -> Path:
    """
    Write trace records as CSV with header iter,l_rec,l_ae,lambda,lr,psnr.

    Floats are written with repr so equal traces give byte-identical files; a missing PSNR is empty.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRACE_HEADER)
        for rec in trace:
            writer.writerow([rec.iter, _fmt(rec.l_rec), _fmt(rec.l_ae), _fmt(rec.lam), _fmt(rec.lr), _fmt(rec.psnr)])
    return path


def read_trace_csv(path: str | Path) -> List[Dict[str, Any]]:
    """Parse a trace file back into dictionaries keyed by the header."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != TRACE_HEADER:
            raise DataFormatError(f"{path}: unexpected trace header {reader.fieldnames}")
        for row in reader:
            rows.append({k: (int(v) if k == "iter" else (float(v) if v else None)) for k, v in row.items()})
    return rows


def make_report(task: str, image: str, psnr_db: float | None, ssim: float | None, iters: int,
                seconds: float, **extra: Any) -> Dict[str, Any]:
    return {"task": task, "image": image, "psnr_db": psnr_db, "ssim": ssim, "iters": iters,
            "seconds": round(seconds, 3), **extra}


def append_report(record: Dict[str, Any], path: str | Path) -> Path:
    """Append one metric report as a single JSON line."""
    missing = [k for k in REPORT_KEYS if k not in record]
    if missing:
        raise DataFormatError(f"report is missing keys {missing}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "a") as fh:
        fh.write(json.dumps(record, sort_keys=False) + "\n")
    return path


def aggregate_reports(paths: Sequence[str | Path]) -> List[Dict[str, Any]]:
    """
    Read every report line from the given files.

    Raises:
        DataFormatError: on a malformed line, naming the file and line number.
    """
    records = []
    for path in paths:
        with open(path) as fh:
            for n, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    record = json.loads(line)
                except json.JSONDecodeError as e:
                    raise DataFormatError(f"{path}:{n}: malformed report line ({e})") from e
                if not isinstance(record, dict) or any(k not in record for k in REPORT_KEYS):
                    raise DataFormatError(f"{path}:{n}: report line lacks {REPORT_KEYS}")
                records.append(record)
    logger.debug(f"Aggregated {len(records)} reports from {len(paths)} files")
    return records
