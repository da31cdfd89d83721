"""Map and mask files: CSV grids, P2 graymaps and 0/1 mask strings."""

import json
from pathlib import Path
from typing import Optional, Union

import numpy as np
import structlog

from ..utils.errors import FormatError, MaskLengthError

logger = structlog.get_logger(__name__)

GRID_FORMAT = "%.17g"
PGM_MAXVAL = 255


def write_grid_csv(values: np.ndarray, path: Union[str, Path]) -> Path:
    """Full-precision comma-separated grid, one image row per line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, np.asarray(values, dtype=np.float64), fmt=GRID_FORMAT, delimiter=",")
    return path


def read_grid_csv(path: Union[str, Path]) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise FormatError(f"grid file not found: {path}", field="path")
    try:
        return np.loadtxt(path, delimiter=",", ndmin=2)
    except ValueError as e:
        raise FormatError(f"grid file {path} is not numeric: {e}", field=path.name) from e


def to_gray_levels(values: np.ndarray) -> np.ndarray:
    """Divide by the maximum and scale to 0..255; an all-zero map stays zero."""
    values = np.asarray(values, dtype=np.float64)
    peak = float(values.max()) if values.size else 0.0
    if peak <= 0.0:
        return np.zeros(values.shape, dtype=np.int64)
    return np.rint(np.clip(values / peak, 0.0, 1.0) * PGM_MAXVAL).astype(np.int64)


def write_pgm(values: np.ndarray, path: Union[str, Path], comment: Optional[str] = None) -> Path:
    """Plain (P2) portable graymap after max-normalization."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    levels = to_gray_levels(values)
    rows, cols = levels.shape
    lines = ["P2"]
    if comment:
        lines.append(f"# {comment}")
    lines.append(f"{cols} {rows}")
    lines.append(str(PGM_MAXVAL))
    lines.extend(" ".join(str(v) for v in row) for row in levels.tolist())
    path.write_text("\n".join(lines) + "\n", encoding="ascii")
    return path


def read_pgm(path: Union[str, Path]) -> np.ndarray:
    tokens = []
    for line in Path(path).read_text(encoding="ascii").splitlines():
        tokens.extend(line.split("#", 1)[0].split())
    if not tokens or tokens[0] != "P2":
        raise FormatError(f"{path} is not a plain graymap", field="magic")
    cols, rows = int(tokens[1]), int(tokens[2])
    data = np.array([int(t) for t in tokens[4:]], dtype=np.int64)
    if data.size != rows * cols:
        raise FormatError(f"{path} holds {data.size} pixels, header says {rows * cols}", field="pixels")
    return data.reshape(rows, cols)


def _bits_from_string(text: str) -> np.ndarray:
    text = text.strip()
    if not text or set(text) - {"0", "1"}:
        raise FormatError("mask must be a non-empty string of 0 and 1 characters", field="mask")
    return np.array([int(ch) for ch in text], dtype=np.int8)


def parse_mask(source: Union[str, Path], feature_dim: int) -> np.ndarray:
    """
    Mask bits from an inline 0/1 string, a mask text file, or a GLM report.

    Raises:
        FormatError: unreadable or malformed mask.
        MaskLengthError: the mask does not have ``feature_dim`` bits.
    """
    text = str(source)
    path = Path(text)
    if set(text.strip()) <= {"0", "1"} and text.strip():
        bits = _bits_from_string(text)
    elif text.strip() and path.is_file():
        content = path.read_text(encoding="utf-8")
        if path.suffix == ".json":
            try:
                report = json.loads(content)
            except json.JSONDecodeError as e:
                raise FormatError(f"{path} is not valid JSON: {e}", field="mask") from e
            if "mask" not in report:
                raise FormatError(f"{path} has no mask entry", field="mask")
            bits = _bits_from_string(str(report["mask"]))
        else:
            bits = _bits_from_string(content)
    else:
        raise FormatError(f"mask is neither a 0/1 string nor an existing file: {text}", field="mask")
    if bits.shape[0] != feature_dim:
        raise MaskLengthError(f"mask has {bits.shape[0]} bits, model has {feature_dim} features")
    return bits


def write_mask(bits: np.ndarray, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(str(int(b)) for b in bits) + "\n", encoding="utf-8")
    return path
