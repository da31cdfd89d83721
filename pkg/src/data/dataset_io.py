"""
Dataset directory format.

A dataset directory holds ``manifest.json`` (counts, seeds, image shape and
column names) and ``data.csv`` with columns ``id, group, <covariates>,
pixel_0 ... pixel_{H*W-1}`` in row-major pixel order. Floats are written with
17 significant digits so a save/load cycle is exact.
"""

import json
from pathlib import Path
from typing import List, Optional, Union

import numpy as np
import pandas as pd
import structlog
from pydantic import BaseModel, Field, ValidationError, field_validator

from .synthdata import Dataset, ImageRecord
from ..utils.errors import FormatError, ShapeError

logger = structlog.get_logger(__name__)

MANIFEST_FILE = "manifest.json"
DATA_FILE = "data.csv"
FORMAT_VERSION = 1
FLOAT_FORMAT = "%.17g"


class DatasetManifest(BaseModel):
    """Schema of ``manifest.json``."""
    format_version: int = FORMAT_VERSION
    n_records: int = Field(ge=1)
    n_per_group: int = Field(ge=1)
    seed: Optional[int] = None
    run_seed: Optional[int] = None
    image_shape: List[int]
    covariate_names: List[str]
    confounder_names: List[str]

    @field_validator("image_shape")
    @classmethod
    def check_shape(cls, value: List[int]) -> List[int]:
        if len(value) != 2 or any(extent < 1 for extent in value):
            raise ValueError("image_shape must be two positive extents")
        return value

    @field_validator("format_version")
    @classmethod
    def check_version(cls, value: int) -> int:
        if value != FORMAT_VERSION:
            raise ValueError(f"unsupported format version {value}")
        return value


def pixel_columns(n_pixels: int) -> List[str]:
    return [f"pixel_{i}" for i in range(n_pixels)]


def save_dataset(dataset: Dataset, directory: Union[str, Path]) -> Path:
    """Write ``dataset`` into ``directory`` (created if needed)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    shape = list(dataset.image_shape)
    manifest = DatasetManifest(
        n_records=len(dataset),
        n_per_group=dataset.n_per_group,
        seed=dataset.seed,
        run_seed=dataset.run_seed,
        image_shape=shape,
        covariate_names=dataset.covariate_names,
        confounder_names=dataset.confounder_names,
    )
    (directory / MANIFEST_FILE).write_text(manifest.model_dump_json(indent=2) + "\n", encoding="utf-8")

    n_pixels = int(np.prod(shape))
    frame = pd.DataFrame({"id": dataset.ids(), "group": dataset.groups()})
    for name in dataset.covariate_names:
        frame[name] = [record.covariates[name] for record in dataset.records]
    pixels = pd.DataFrame(dataset.images().reshape(len(dataset), n_pixels), columns=pixel_columns(n_pixels))
    frame = pd.concat([frame, pixels], axis=1)
    frame.to_csv(directory / DATA_FILE, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    logger.info("dataset.saved", path=str(directory), records=len(dataset))
    return directory


def load_manifest(directory: Union[str, Path]) -> DatasetManifest:
    path = Path(directory) / MANIFEST_FILE
    if not path.exists():
        raise FormatError(f"dataset manifest not found: {path}", field=MANIFEST_FILE)
    try:
        return DatasetManifest.model_validate(json.loads(path.read_text(encoding="utf-8")))
    except json.JSONDecodeError as e:
        raise FormatError(f"manifest is not valid JSON: {e}", field=MANIFEST_FILE) from e
    except ValidationError as e:
        loc = ".".join(str(part) for part in e.errors()[0]["loc"])
        raise FormatError("manifest validation failed", field=loc) from e


def load_dataset(directory: Union[str, Path]) -> Dataset:
    """Read and validate a dataset directory written by ``save_dataset``."""
    directory = Path(directory)
    manifest = load_manifest(directory)
    data_path = directory / DATA_FILE
    if not data_path.exists():
        raise FormatError(f"dataset table not found: {data_path}", field=DATA_FILE)

    n_pixels = int(np.prod(manifest.image_shape))
    expected = ["id", "group"] + manifest.covariate_names + pixel_columns(n_pixels)
    try:
        frame = pd.read_csv(data_path, dtype={"id": str}, float_precision="round_trip")
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise FormatError(f"cannot parse {data_path}: {e}", field=DATA_FILE) from e

    missing = [column for column in expected if column not in frame.columns]
    if missing:
        raise FormatError("data.csv is missing a column", field=missing[0])
    if len(frame) != manifest.n_records:
        raise FormatError(
            f"data.csv has {len(frame)} rows, manifest declares {manifest.n_records}", field="n_records"
        )
    if not frame["group"].isin([1, 2]).all():
        raise FormatError("group labels must be 1 or 2", field="group")

    numeric = frame[manifest.covariate_names + pixel_columns(n_pixels)]
    try:
        values = numeric.to_numpy(dtype=np.float64)
    except ValueError as e:
        raise FormatError(f"non-numeric value in data.csv: {e}", field=DATA_FILE) from e
    if not np.isfinite(values).all():
        bad_column = numeric.columns[~np.isfinite(values).all(axis=0)][0]
        raise FormatError("non-finite value in data.csv", field=bad_column)

    n_cov = len(manifest.covariate_names)
    images = values[:, n_cov:].reshape(len(frame), *manifest.image_shape)
    records = [
        ImageRecord(
            image=images[i].copy(),
            group=int(frame["group"].iloc[i]),
            covariates={name: float(values[i, k]) for k, name in enumerate(manifest.covariate_names)},
            id=str(frame["id"].iloc[i]),
        )
        for i in range(len(frame))
    ]
    try:
        dataset = Dataset(
            records=records,
            confounder_names=manifest.confounder_names,
            covariate_names=manifest.covariate_names,
            n_per_group=manifest.n_per_group,
            seed=manifest.seed,
            run_seed=manifest.run_seed,
        )
    except ShapeError as e:
        raise FormatError(str(e), field=DATA_FILE) from e
    logger.info("dataset.loaded", path=str(directory), records=len(dataset))
    return dataset
