"""
Model file format.

    confound-saliency-model v1
    {"metadata": {...}, "parameters": [{"name": ..., "shape": [...]}, ...], "spec": {...}}
    param encoder.0.weight 4x1x2x2
    <space-separated floats>
    ...

Floats are written with ``repr``, which round-trips float64 exactly.
"""

import json
from pathlib import Path
from typing import Dict, List, Tuple, Union

import numpy as np
import structlog
from pydantic import ValidationError

from .convnet import ConvNetModel, ModelSpec, TrainingMetadata
from ..utils.errors import FormatError, ShapeError

logger = structlog.get_logger(__name__)

MAGIC = "confound-saliency-model"
VERSION = 1


def _shape_text(shape: Tuple[int, ...]) -> str:
    return "x".join(str(extent) for extent in shape)


def save_model(model: ConvNetModel, path: Union[str, Path]) -> Path:
    """Write ``model`` to ``path`` (parent directories are created)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "spec": model.spec.model_dump(),
        "metadata": model.metadata.model_dump(),
        "parameters": [
            {"name": name, "shape": list(value.shape)} for name, value in model.parameters.items()
        ],
    }
    lines = [f"{MAGIC} v{VERSION}", json.dumps(header, sort_keys=True)]
    for name, value in model.parameters.items():
        lines.append(f"param {name} {_shape_text(value.shape)}")
        lines.append(" ".join(repr(float(v)) for v in value.reshape(-1).tolist()))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    logger.info("model.saved", path=str(path), parameters=len(model.parameters))
    return path


def _parse_header(lines: List[str]) -> Tuple[ModelSpec, TrainingMetadata, List[dict]]:
    if not lines or lines[0].strip() != f"{MAGIC} v{VERSION}":
        raise FormatError("not a model file or unsupported version", field="magic")
    if len(lines) < 2:
        raise FormatError("model file is truncated", field="header")
    try:
        header = json.loads(lines[1])
    except json.JSONDecodeError as e:
        raise FormatError(f"header is not valid JSON: {e}", field="header") from e
    for key in ("spec", "metadata", "parameters"):
        if key not in header:
            raise FormatError("header is missing a key", field=key)
    try:
        spec = ModelSpec.model_validate(header["spec"])
        metadata = TrainingMetadata.model_validate(header["metadata"])
    except ValidationError as e:
        loc = ".".join(str(part) for part in e.errors()[0]["loc"])
        raise FormatError("header validation failed", field=loc) from e
    return spec, metadata, header["parameters"]


def load_model(path: Union[str, Path]) -> ConvNetModel:
    """
    Read a model written by ``save_model``.

    Raises:
        FormatError: malformed or truncated file, naming the offending field.
        ShapeError: a declared parameter shape disagrees with the model topology.
    """
    path = Path(path)
    if not path.exists():
        raise FormatError(f"model file not found: {path}", field="path")
    lines = path.read_text(encoding="utf-8").splitlines()
    spec, metadata, declared = _parse_header(lines)

    expected = spec.parameter_shapes()
    if len(declared) != len(expected):
        raise FormatError(f"header declares {len(declared)} parameters, spec needs {len(expected)}",
                          field="parameters")
    for entry, (name, shape) in zip(declared, expected):
        if entry.get("name") != name:
            raise FormatError(f"expected parameter {name}, header has {entry.get('name')}", field="parameters")
        if tuple(entry.get("shape", ())) != shape:
            raise ShapeError(f"parameter {name}: header shape {entry.get('shape')} does not match spec {list(shape)}")

    parameters: Dict[str, np.ndarray] = {}
    cursor = 2
    for name, shape in expected:
        if cursor + 1 >= len(lines):
            raise FormatError("model file is truncated", field=name)
        tag = lines[cursor].split()
        if len(tag) != 3 or tag[0] != "param" or tag[1] != name:
            raise FormatError(f"expected block for {name}, found {lines[cursor][:40]!r}", field=name)
        if tag[2] != _shape_text(shape):
            raise ShapeError(f"parameter {name}: block shape {tag[2]} does not match spec {_shape_text(shape)}")
        try:
            values = [float(token) for token in lines[cursor + 1].split()]
        except ValueError as e:
            raise FormatError(f"non-numeric value in {name}", field=name) from e
        if len(values) != int(np.prod(shape)):
            raise FormatError(f"{name} has {len(values)} values, expected {int(np.prod(shape))}", field=name)
        parameters[name] = np.array(values, dtype=np.float64).reshape(shape)
        cursor += 2

    logger.info("model.loaded", path=str(path))
    return ConvNetModel(spec, parameters, metadata)
