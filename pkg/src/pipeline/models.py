"""
Report models for the pipeline.

This module defines the Pydantic models written as ``glm_report.json`` and
``run_report.json``. Reports hold no timestamps, so identical runs produce
identical files.
"""

import json
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field, ValidationError

from ..analysis.glm import ConfoundMask
from ..utils.errors import FormatError


def _finite_or_none(value: float) -> Optional[float]:
    return None if np.isnan(value) else float(value)


class GroupDifference(BaseModel):
    """Two-sample t-test of one covariate, Group 2 vs Group 1."""
    t: float
    p: float
    dof: int


class GlmFeatureRecord(BaseModel):
    """Fit summary of one feature column."""
    index: int
    confounded: bool
    zero_variance: bool = False
    degenerate: bool = False
    error: Optional[str] = None
    min_confounder_p: Optional[float] = None
    beta: Dict[str, float] = Field(default_factory=dict)
    se: Dict[str, float] = Field(default_factory=dict)
    t: Dict[str, float] = Field(default_factory=dict)
    p: Dict[str, float] = Field(default_factory=dict)


class GlmReport(BaseModel):
    """Contents of ``glm_report.json``."""
    alpha: float
    effective_alpha: float
    bonferroni: bool = False
    n_samples: int
    n_confounders: int
    n_features: int
    confounders: List[str]
    mask: str
    confounded_count: int
    confounded_features: List[int]
    alpha_sweep: Dict[str, int] = Field(default_factory=dict)
    group_differences: Dict[str, GroupDifference] = Field(default_factory=dict)
    features: List[GlmFeatureRecord] = Field(default_factory=list)

    @classmethod
    def from_mask(
        cls,
        mask: ConfoundMask,
        n_samples: int,
        bonferroni: bool = False,
        alpha_sweep: Optional[Dict[str, int]] = None,
        group_differences: Optional[Dict[str, Tuple[float, float, int]]] = None,
    ) -> "GlmReport":
        features = []
        for j in range(len(mask)):
            fit = mask.fits[j] if j < len(mask.fits) else None
            record = GlmFeatureRecord(
                index=j,
                confounded=bool(mask.bits[j] == 0),
                zero_variance=j in mask.zero_variance,
                error=mask.failed.get(j),
                min_confounder_p=_finite_or_none(mask.min_p[j]),
            )
            if fit is not None:
                names = fit.covariate_names
                record.degenerate = fit.degenerate
                record.beta = dict(zip(names, fit.beta.tolist()))
                record.se = dict(zip(names, fit.se.tolist()))
                record.t = dict(zip(names, fit.t_stats.tolist()))
                record.p = dict(zip(names, fit.p_values.tolist()))
            features.append(record)
        differences = {
            name: GroupDifference(t=t, p=p, dof=dof)
            for name, (t, p, dof) in (group_differences or {}).items()
        }
        return cls(
            alpha=mask.alpha,
            effective_alpha=mask.effective_alpha,
            bonferroni=bonferroni,
            n_samples=n_samples,
            n_confounders=len(mask.confounder_names),
            n_features=len(mask),
            confounders=list(mask.confounder_names),
            mask=mask.as_bitstring(),
            confounded_count=mask.confounded_count,
            confounded_features=mask.confounded_indices,
            alpha_sweep=dict(alpha_sweep or {}),
            group_differences=differences,
            features=features,
        )


class BlockMeans(BaseModel):
    """Mean saliency per quadrant block."""
    A: float
    B: float
    C: float
    D: float


class RunReport(BaseModel):
    """Contents of ``run_report.json``; artifact paths are relative to the output directory."""
    seed: int
    sub_seeds: Dict[str, int]
    n_records: int
    training_accuracy: float
    loss_history: List[float]
    alpha: float
    effective_alpha: float
    confounders: List[str]
    confounded_feature_count: int
    confounded_features: List[int]
    confounded_feature_blocks: Dict[str, int] = Field(default_factory=dict)
    block_means_full: BlockMeans
    block_means_partial: BlockMeans
    attenuation_ratio_bc: float
    retention_ratio_ad: float
    attenuation_ratio_ad: float
    refactorization_max_abs_diff: Optional[float] = None
    artifacts: Dict[str, str] = Field(default_factory=dict)


def dump_json(model: BaseModel) -> str:
    """Serialize with infinities kept as ``Infinity`` so reports round-trip."""
    return json.dumps(model.model_dump(mode="python"), indent=2, allow_nan=True) + "\n"


def write_report(model: BaseModel, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dump_json(model), encoding="utf-8")
    return path


def load_run_report(path: Union[str, Path]) -> RunReport:
    path = Path(path)
    try:
        return RunReport.model_validate(json.loads(path.read_text(encoding="utf-8")))
    except json.JSONDecodeError as e:
        raise FormatError(f"{path} is not valid JSON: {e}", field="run_report") from e
    except ValidationError as e:
        loc = ".".join(str(part) for part in e.errors()[0]["loc"])
        raise FormatError("run report validation failed", field=loc) from e


def load_glm_report(path: Union[str, Path]) -> GlmReport:
    path = Path(path)
    try:
        return GlmReport.model_validate(json.loads(path.read_text(encoding="utf-8")))
    except json.JSONDecodeError as e:
        raise FormatError(f"{path} is not valid JSON: {e}", field="glm_report") from e
    except ValidationError as e:
        loc = ".".join(str(part) for part in e.errors()[0]["loc"])
        raise FormatError("GLM report validation failed", field=loc) from e
