"""
Saliency maps by back-propagation to the input image.

A full map is |ds/dI| per pixel. A partial map zeroes the adjoint of masked
features at the feature node, so only retained features (b^j = 1) contribute:

    |sum_j b^j (ds/df^j)(df^j/dI)|

The same quantity is obtained independently by refactorizing the model with a
dummy layer that replaces masked features with per-image constants and running
ordinary full back-propagation through it.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Union

import numpy as np
import structlog

from .glm import ConfoundMask
from ..autodiff import ops
from ..autodiff.tape import backward
from ..data.blob_config import BLOCK_IDS
from ..data.synthdata import block_mask
from ..model.convnet import ConvNetModel, ForwardPass
from ..utils.errors import (
    ContractError,
    EmptyInputError,
    FeatureIndexError,
    MaskLengthError,
    ShapeError,
)

logger = structlog.get_logger(__name__)

FULL = "full"
PARTIAL = "partial"
ATTENUATION = "attenuation"
MODES = (FULL, PARTIAL, ATTENUATION)

MaskLike = Union[ConfoundMask, Sequence[int], np.ndarray]


@dataclass(frozen=True, eq=False)
class SaliencyMap:
    """Non-negative per-pixel saliency for one subject (or an average when subject_id is None)."""
    values: np.ndarray
    subject_id: Optional[str] = None
    mode: str = FULL
    mask_id: Optional[str] = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ContractError(f"unknown saliency mode {self.mode!r}")
        if np.ndim(self.values) != 2:
            raise ShapeError(f"saliency map must be 2-D, got shape {np.shape(self.values)}")
        if np.any(self.values < 0):
            raise ContractError("saliency values must be non-negative")

    @property
    def shape(self):
        return self.values.shape


def mask_bits(mask: MaskLike, feature_dim: int) -> np.ndarray:
    """Mask as a float 0/1 vector of length ``feature_dim``."""
    bits = getattr(mask, "bits", mask)
    bits = np.asarray(bits, dtype=np.float64).reshape(-1)
    if bits.shape[0] != feature_dim:
        raise MaskLengthError(f"mask has {bits.shape[0]} bits, model has {feature_dim} features")
    if not np.isin(bits, (0.0, 1.0)).all():
        raise ContractError("mask bits must be 0 or 1")
    return bits


def mask_identifier(bits: np.ndarray) -> str:
    return "".join("1" if b else "0" for b in bits)


def signed_gradient(model: ConvNetModel, image: np.ndarray, mask: Optional[MaskLike] = None) -> np.ndarray:
    """ds/dI, optionally with the feature adjoint multiplied by the mask."""
    result = model.forward(image)
    masks = None
    if mask is not None:
        masks = {result.feature_node: mask_bits(mask, model.feature_dim)}
    gradients = backward(result.tape, result.score_node, adjoint_masks=masks)
    return gradients[result.image].reshape(model.image_shape)


def saliency_map(model: ConvNetModel, image: np.ndarray, subject_id: Optional[str] = None) -> SaliencyMap:
    return SaliencyMap(np.abs(signed_gradient(model, image)), subject_id, FULL)


def partial_saliency_map(model: ConvNetModel, image: np.ndarray, mask: MaskLike,
                         subject_id: Optional[str] = None) -> SaliencyMap:
    """Single backward pass with the masked features' adjoints zeroed."""
    bits = mask_bits(mask, model.feature_dim)
    values = np.abs(signed_gradient(model, image, bits))
    return SaliencyMap(values, subject_id, PARTIAL, mask_identifier(bits))


def feature_gradient(model: ConvNetModel, image: np.ndarray, forward_pass: Optional[ForwardPass] = None) -> np.ndarray:
    """ds/df for every feature."""
    result = forward_pass or model.forward(image)
    return backward(result.tape, result.score_node)[result.feature_node].copy()


def feature_jacobian_row(model: ConvNetModel, image: np.ndarray, j: int,
                         forward_pass: Optional[ForwardPass] = None) -> np.ndarray:
    """df^j/dI, from a backward pass seeded with the unit vector e_j at the feature node."""
    if not 0 <= j < model.feature_dim:
        raise FeatureIndexError(f"feature index {j} outside [0, {model.feature_dim})")
    result = forward_pass or model.forward(image)
    seed = np.zeros(model.feature_dim)
    seed[j] = 1.0
    gradients = backward(result.tape, result.feature_node, seed=seed)
    return gradients[result.image].reshape(model.image_shape)


def feature_jacobian(model: ConvNetModel, image: np.ndarray) -> np.ndarray:
    """All rows df^j/dI stacked to [M, H, W], sharing one recorded forward pass."""
    result = model.forward(image)
    return np.stack([
        feature_jacobian_row(model, image, j, forward_pass=result) for j in range(model.feature_dim)
    ])


def explicit_partial_gradient(model: ConvNetModel, image: np.ndarray, mask: MaskLike) -> np.ndarray:
    """Signed sum_j b^j (ds/df^j)(df^j/dI), one Jacobian row per feature."""
    bits = mask_bits(mask, model.feature_dim)
    result = model.forward(image)
    weights = bits * feature_gradient(model, image, forward_pass=result)
    total = np.zeros(model.image_shape)
    for j in np.flatnonzero(weights):
        total += weights[j] * feature_jacobian_row(model, image, int(j), forward_pass=result)
    return total


@dataclass(frozen=True, eq=False)
class RefactorizedModel:
    """
    Base model with the dummy layer x*b + (1-b)*y inserted after the encoder.

    ``frozen_features`` are the features of the defining image, so on that
    image the refactorized score equals the original score.
    """
    base: ConvNetModel
    frozen_features: np.ndarray
    bits: np.ndarray
    subject_id: Optional[str] = None

    @property
    def mask_id(self) -> str:
        return mask_identifier(self.bits)

    def _dummy_layer(self, features):
        return ops.masked_blend(features, self.bits, self.frozen_features)

    def forward(self, image: np.ndarray, record: bool = True) -> ForwardPass:
        return self.base.forward(image, record=record, feature_transform=self._dummy_layer)

    def score(self, image: np.ndarray) -> float:
        return self.forward(image, record=False).score

    def gradient(self, image: np.ndarray) -> np.ndarray:
        """Plain full back-propagation through the refactorized network."""
        result = self.forward(image)
        return backward(result.tape, result.score_node)[result.image].reshape(self.base.image_shape)

    def saliency_map(self, image: np.ndarray) -> SaliencyMap:
        return SaliencyMap(np.abs(self.gradient(image)), self.subject_id, PARTIAL, self.mask_id)


def refactorize_model(model: ConvNetModel, image: np.ndarray, mask: MaskLike,
                      subject_id: Optional[str] = None) -> RefactorizedModel:
    bits = mask_bits(mask, model.feature_dim)
    return RefactorizedModel(model, model.features(image), bits, subject_id)


def average_saliency(maps: Sequence[SaliencyMap]) -> SaliencyMap:
    """Pointwise mean, accumulated in list order."""
    if not maps:
        raise EmptyInputError("cannot average an empty list of saliency maps")
    shape = maps[0].shape
    mode = maps[0].mode
    total = np.zeros(shape)
    for smap in maps:
        if smap.shape != shape:
            raise ShapeError(f"saliency map shape {smap.shape} differs from {shape}")
        if smap.mode != mode:
            raise ContractError(f"cannot average {smap.mode} maps with {mode} maps")
        total += smap.values
    mask_ids = {smap.mask_id for smap in maps}
    mask_id = mask_ids.pop() if len(mask_ids) == 1 else None
    return SaliencyMap(total / len(maps), None, mode, mask_id)


def _values(smap: Union[SaliencyMap, np.ndarray]) -> np.ndarray:
    return smap.values if isinstance(smap, SaliencyMap) else np.asarray(smap, dtype=np.float64)


def _region(blocks: Union[str, Iterable[str], Mapping[str, np.ndarray]], shape) -> Dict[str, np.ndarray]:
    if isinstance(blocks, Mapping):
        return {name: np.asarray(region, dtype=bool) for name, region in blocks.items()}
    if isinstance(blocks, str):
        blocks = [blocks]
    return {name: block_mask(name, shape) for name in blocks}


def block_saliency_stats(smap: Union[SaliencyMap, np.ndarray],
                         blocks: Union[Iterable[str], Mapping[str, np.ndarray]] = BLOCK_IDS) -> Dict[str, float]:
    """
    Mean saliency inside each block.

    ``blocks`` are quadrant ids or a mapping of name to boolean pixel mask.
    """
    values = _values(smap)
    stats = {}
    for name, region in _region(blocks, values.shape).items():
        if region.shape != values.shape:
            raise ShapeError(f"block {name!r} mask shape {region.shape} differs from map shape {values.shape}")
        stats[name] = float(values[region].mean()) if region.any() else 0.0
    return stats


def union_mean(smap: Union[SaliencyMap, np.ndarray], blocks: Iterable[str]) -> float:
    """Mean saliency over the union of the given quadrant blocks."""
    values = _values(smap)
    region = np.zeros(values.shape, dtype=bool)
    for mask in _region(blocks, values.shape).values():
        region |= mask
    return float(values[region].mean()) if region.any() else 0.0


def _ratio(numerator: float, denominator: float) -> float:
    if denominator == 0.0:
        return float("inf")
    return numerator / denominator


def attenuation_ratio(full: SaliencyMap, partial: SaliencyMap, blocks: Sequence[str] = ("B", "C")) -> float:
    """full / partial mean over the blocks; infinity when the partial mean is zero."""
    return _ratio(union_mean(full, blocks), union_mean(partial, blocks))


def retention_ratio(full: SaliencyMap, partial: SaliencyMap, blocks: Sequence[str] = ("A", "D")) -> float:
    """partial / full mean over the blocks; infinity when the full mean is zero."""
    return _ratio(union_mean(partial, blocks), union_mean(full, blocks))


def attenuation_map(full: SaliencyMap, partial: SaliencyMap) -> SaliencyMap:
    """Saliency removed by masking: max(full - partial, 0) per pixel."""
    if full.shape != partial.shape:
        raise ShapeError(f"full map shape {full.shape} differs from partial map shape {partial.shape}")
    return SaliencyMap(np.clip(full.values - partial.values, 0.0, None), full.subject_id,
                       ATTENUATION, partial.mask_id)


def compute_maps(model: ConvNetModel, images: Sequence[np.ndarray], ids: Sequence[str],
                 mask: Optional[MaskLike] = None, workers: int = 1) -> List[SaliencyMap]:
    """
    One map per image, full or (with ``mask``) partial.

    Images are independent; results come back in input order regardless of
    ``workers``.
    """
    if len(images) != len(ids):
        raise ShapeError(f"{len(images)} images but {len(ids)} ids")
    bits = None if mask is None else mask_bits(mask, model.feature_dim)

    def one(index: int) -> SaliencyMap:
        if bits is None:
            return saliency_map(model, images[index], ids[index])
        return partial_saliency_map(model, images[index], bits, ids[index])

    if workers <= 1:
        maps = [one(i) for i in range(len(images))]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            maps = list(pool.map(one, range(len(images))))
    logger.debug("saliency.maps", count=len(maps), mode=FULL if bits is None else PARTIAL, workers=workers)
    return maps


def per_group_average(maps: Sequence[SaliencyMap], groups: Sequence[int]) -> Dict[int, SaliencyMap]:
    """Average map of each group, groups in ascending order."""
    if len(maps) != len(groups):
        raise ShapeError(f"{len(maps)} maps but {len(groups)} group labels")
    return {
        int(group): average_saliency([m for m, g in zip(maps, groups) if g == group])
        for group in sorted(set(int(g) for g in groups))
    }


def feature_block_profile(model: ConvNetModel, images: Sequence[np.ndarray],
                          features: Optional[Sequence[int]] = None,
                          blocks: Sequence[str] = BLOCK_IDS) -> Dict[int, str]:
    """
    Block where each feature draws most of its input gradient.

    For every requested feature (default: all), |df^j/dI| is averaged over
    ``images`` and the block with the largest mean wins; features with no
    input gradient map to "".
    """
    if len(images) == 0:
        raise EmptyInputError("feature_block_profile needs at least one image")
    indices = list(range(model.feature_dim)) if features is None else [int(j) for j in features]
    accumulated = {j: np.zeros(model.image_shape) for j in indices}
    for image in images:
        result = model.forward(image)
        for j in indices:
            accumulated[j] += np.abs(feature_jacobian_row(model, image, j, forward_pass=result))
    regions = _region(blocks, model.image_shape)
    profile: Dict[int, str] = {}
    for j in indices:
        means = {name: float(accumulated[j][region].mean()) for name, region in regions.items()}
        best = max(means, key=lambda name: means[name])
        profile[j] = best if means[best] > 0.0 else ""
    return profile
