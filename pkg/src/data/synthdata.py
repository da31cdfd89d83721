"""
Synthetic two-group Gaussian blob dataset with recorded confounders.

Each image is the sum of four unit-amplitude isotropic Gaussians, one per
quadrant block. Group 1 draws every blob width from U(2, 6), Group 2 from
U(4, 8); the widths of the off-diagonal blocks B and C are recorded as
confounders.
"""

from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import structlog

from . import blob_config
from ..utils.errors import ContractError, ShapeError, UnknownColumnError

logger = structlog.get_logger(__name__)


@dataclass(frozen=True)
class BlobSpec:
    """One isotropic Gaussian blob."""
    center: Tuple[int, int]
    sigma: float
    amplitude: float = blob_config.BLOB_AMPLITUDE

    def __post_init__(self):
        if not self.sigma > 0:
            raise ContractError(f"sigma must be positive, got {self.sigma}")
        if not self.amplitude > 0:
            raise ContractError(f"amplitude must be positive, got {self.amplitude}")

    def render(self, shape: Tuple[int, int] = (blob_config.IMAGE_SIZE, blob_config.IMAGE_SIZE)) -> np.ndarray:
        """Evaluate the blob at integer pixel centres of a (rows, cols) grid."""
        row, col = self.center
        if not (0 <= row < shape[0] and 0 <= col < shape[1]):
            raise ContractError(f"blob center {self.center} outside image of shape {shape}")
        rows, cols = np.mgrid[0:shape[0], 0:shape[1]].astype(np.float64)
        sq_dist = (rows - row) ** 2 + (cols - col) ** 2
        return self.amplitude * np.exp(-sq_dist / (2.0 * self.sigma ** 2))


@dataclass(frozen=True, eq=False)
class ImageRecord:
    """An image with its group label and named covariate values."""
    image: np.ndarray
    group: int
    covariates: Dict[str, float] = field(default_factory=dict)
    id: str = ""


@dataclass(frozen=True, eq=False)
class SyntheticRecord(ImageRecord):
    """A generated record; covariates hold the four blob widths."""

    @property
    def sigma_A(self) -> float:
        return self.covariates["sigma_A"]

    @property
    def sigma_B(self) -> float:
        return self.covariates["sigma_B"]

    @property
    def sigma_C(self) -> float:
        return self.covariates["sigma_C"]

    @property
    def sigma_D(self) -> float:
        return self.covariates["sigma_D"]


@dataclass
class Dataset:
    """Collection of image records plus covariate and confounder column names."""
    records: List[ImageRecord]
    confounder_names: List[str]
    covariate_names: List[str]
    n_per_group: int
    seed: Optional[int] = None
    run_seed: Optional[int] = None

    def __post_init__(self):
        if not self.records:
            raise ContractError("dataset must contain at least one record")
        shape = self.records[0].image.shape
        expected = set(self.covariate_names)
        for record in self.records:
            if record.image.shape != shape:
                raise ShapeError(
                    f"record {record.id!r} has image shape {record.image.shape}, expected {shape}"
                )
            if set(record.covariates) != expected:
                raise ShapeError(f"record {record.id!r} covariates do not match {self.covariate_names}")
        for name in self.confounder_names:
            if name not in expected:
                raise UnknownColumnError(name, self.covariate_names)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def image_shape(self) -> Tuple[int, ...]:
        return self.records[0].image.shape

    def ids(self) -> List[str]:
        return [record.id for record in self.records]

    def images(self) -> np.ndarray:
        return np.stack([record.image for record in self.records])

    def groups(self) -> np.ndarray:
        return np.array([record.group for record in self.records], dtype=np.int64)

    def targets(self) -> np.ndarray:
        return np.array([blob_config.label_to_target(g) for g in self.groups()], dtype=np.float64)

    def covariate_matrix(self, names: Optional[Sequence[str]] = None) -> np.ndarray:
        """N x K matrix of the named covariates (default: the confounders)."""
        names = list(self.confounder_names if names is None else names)
        for name in names:
            if name not in self.covariate_names:
                raise UnknownColumnError(name, self.covariate_names)
        return np.array(
            [[record.covariates[name] for name in names] for record in self.records],
            dtype=np.float64,
        ).reshape(len(self.records), len(names))


def render_blobs(blobs: Iterable[BlobSpec], shape: Tuple[int, int]) -> np.ndarray:
    image = np.zeros(shape, dtype=np.float64)
    for blob in blobs:
        image += blob.render(shape)
    return image


def generate_image(group: int, rng: np.random.Generator) -> SyntheticRecord:
    """
    Generate one synthetic record for ``group``.

    Every blob width is drawn independently from the group's interval, in block
    order A, B, C, D.
    """
    if group not in blob_config.GROUPS:
        raise ContractError(f"group must be one of {blob_config.GROUPS}, got {group}")
    low, high = blob_config.GROUP_SIGMA_RANGES[group]
    sigmas = rng.uniform(low, high, size=len(blob_config.BLOCK_IDS))
    blobs = [
        BlobSpec(center=blob_config.BLOB_CENTERS[block], sigma=float(sigma))
        for block, sigma in zip(blob_config.BLOCK_IDS, sigmas)
    ]
    size = blob_config.IMAGE_SIZE
    image = render_blobs(blobs, (size, size))
    covariates = {f"sigma_{block}": float(s) for block, s in zip(blob_config.BLOCK_IDS, sigmas)}
    return SyntheticRecord(image=image, group=group, covariates=covariates)


def record_rng(seed: int, index: int) -> np.random.Generator:
    """Per-record generator; records can be produced in any order."""
    return np.random.default_rng([seed, index])


def generate_dataset(n_per_group: int, seed: int) -> Dataset:
    """
    Generate ``2 * n_per_group`` records: Group 1 first, then Group 2.

    Record ``i`` draws from ``record_rng(seed, i)`` so the result does not depend
    on generation order.
    """
    if n_per_group < 1:
        raise ContractError(f"n_per_group must be >= 1, got {n_per_group}")
    records: List[ImageRecord] = []
    for index in range(2 * n_per_group):
        group = 1 if index < n_per_group else 2
        record = generate_image(group, record_rng(seed, index))
        records.append(replace(record, id=str(index)))
    logger.info("synth.generated", records=len(records), n_per_group=n_per_group, seed=seed)
    return Dataset(
        records=records,
        confounder_names=list(blob_config.DEFAULT_CONFOUNDERS),
        covariate_names=list(blob_config.SIGMA_COLUMNS),
        n_per_group=n_per_group,
        seed=seed,
    )


def block_mask(block: str, shape: Tuple[int, int] = (blob_config.IMAGE_SIZE, blob_config.IMAGE_SIZE)) -> np.ndarray:
    """
    Boolean pixel mask of a quadrant block.

    A is top-left, B top-right, C bottom-left, D bottom-right; the four masks
    partition the grid.
    """
    if block not in blob_config.BLOCK_IDS:
        raise ContractError(f"unknown block {block!r}; expected one of {blob_config.BLOCK_IDS}")
    rows, cols = shape
    half_r, half_c = rows // 2, cols // 2
    mask = np.zeros(shape, dtype=bool)
    row_slice = slice(0, half_r) if block in ("A", "B") else slice(half_r, rows)
    col_slice = slice(0, half_c) if block in ("A", "C") else slice(half_c, cols)
    mask[row_slice, col_slice] = True
    return mask


def block_pixels(block: str, shape: Tuple[int, int] = (blob_config.IMAGE_SIZE, blob_config.IMAGE_SIZE)):
    """The block as a set of (row, col) coordinates."""
    rows, cols = np.nonzero(block_mask(block, shape))
    return frozenset(zip(rows.tolist(), cols.tolist()))
