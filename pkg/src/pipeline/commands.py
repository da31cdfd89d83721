"""
Pipeline commands: synth, train, confound-test, saliency and pipeline.

Each ``cmd_*`` function reads and validates its input files, runs the stage
and writes its artifacts. ``cmd_pipeline`` chains the same stage functions in
memory and writes the same file layout, so a pipelined run and separately run
commands with the same seed produce identical files.
"""

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import structlog

from .models import GlmReport, BlockMeans, RunReport, write_report
from .stage import run_stage
from ..analysis import export
from ..analysis.glm import ConfoundMask, alpha_sweep, build_confound_mask, confounder_group_differences
from ..analysis.saliency import (
    SaliencyMap,
    attenuation_map,
    attenuation_ratio,
    average_saliency,
    block_saliency_stats,
    compute_maps,
    feature_block_profile,
    per_group_average,
    refactorize_model,
    retention_ratio,
)
from ..data.dataset_io import load_dataset, save_dataset
from ..data.synthdata import Dataset, generate_dataset
from ..model.convnet import ConvNetModel, build_synthetic_model
from ..model.serialization import load_model, save_model
from ..model.training import train, training_accuracy
from ..utils.config_manager import GlmConfig, PipelineConfig, SaliencyConfig, TrainConfig
from ..utils.errors import AccuracyGateError, ShapeError, UnknownColumnError
from ..utils.seeding import derive_seed

logger = structlog.get_logger(__name__)

PathLike = Union[str, Path]

FLOAT_FORMAT = "%.17g"
MODEL_FILE = "model.txt"
FEATURES_FILE = "features.csv"
SCORES_FILE = "scores.csv"
GLM_REPORT_FILE = "glm_report.json"
MASK_FILE = "mask.txt"
AVERAGE_STEM = "average"
RUN_REPORT_FILE = "run_report.json"


def loss_history_path(model_path: PathLike) -> Path:
    model_path = Path(model_path)
    return model_path.with_name(model_path.stem + ".loss.csv")


def _write_frame(frame: pd.DataFrame, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return path


# --- synth -------------------------------------------------------------------

def run_synth(n_per_group: int, seed: int) -> Dataset:
    dataset = generate_dataset(n_per_group, derive_seed(seed, "synth"))
    return replace(dataset, run_seed=seed)


def cmd_synth(n_per_group: int, seed: int, out: PathLike) -> Dataset:
    dataset = run_synth(n_per_group, seed)
    save_dataset(dataset, out)
    return dataset


# --- train -------------------------------------------------------------------

@dataclass
class TrainOutcome:
    model: ConvNetModel
    loss_history: List[float]
    accuracy: float
    init_seed: int
    train_seed: int


def training_seeds(seed: int, train_config: TrainConfig) -> Tuple[int, int]:
    """(init seed, shuffle seed); an explicit ``train.seed`` overrides the derived shuffle seed."""
    train_seed = train_config.seed if train_config.seed is not None else derive_seed(seed, "train")
    return derive_seed(seed, "init"), train_seed


def run_train(dataset: Dataset, train_config: TrainConfig, seed: int) -> TrainOutcome:
    init_seed, train_seed = training_seeds(seed, train_config)
    model = build_synthetic_model(init_seed)
    if model.image_shape != tuple(dataset.image_shape):
        raise ShapeError(f"dataset images are {dataset.image_shape}, model expects {model.image_shape}")
    result = train(model, dataset, train_config.model_copy(update={"seed": train_seed}))
    accuracy = training_accuracy(result.model, dataset)
    logger.info("train.done", accuracy=round(accuracy, 4), epochs=len(result.loss_history))
    return TrainOutcome(result.model, result.loss_history, accuracy, init_seed, train_seed)


def write_training(outcome: TrainOutcome, model_path: PathLike) -> Dict[str, Path]:
    model_path = save_model(outcome.model, model_path)
    history = pd.DataFrame({
        "epoch": np.arange(1, len(outcome.loss_history) + 1, dtype=np.int64),
        "loss": np.asarray(outcome.loss_history, dtype=np.float64),
    })
    loss_path = _write_frame(history, loss_history_path(model_path))
    return {"model": model_path, "loss_history": loss_path}


def enforce_gate(accuracy: float, gate: float) -> None:
    if accuracy < gate:
        raise AccuracyGateError(accuracy, gate)


def cmd_train(data: PathLike, out_model: PathLike, train_config: TrainConfig, seed: int,
              gate: bool = True) -> TrainOutcome:
    """Train on a dataset directory; the model is written before the accuracy gate is checked."""
    dataset = load_dataset(data)
    outcome = run_train(dataset, train_config, seed)
    write_training(outcome, out_model)
    if gate:
        enforce_gate(outcome.accuracy, train_config.accuracy_gate)
    return outcome


# --- confound-test -----------------------------------------------------------

@dataclass
class ConfoundOutcome:
    mask: ConfoundMask
    report: GlmReport
    features: np.ndarray
    scores: np.ndarray


def check_columns(dataset: Dataset, names: Sequence[str]) -> None:
    for name in names:
        if name not in dataset.covariate_names:
            raise UnknownColumnError(name, dataset.covariate_names)


def extract_features(model: ConvNetModel, dataset: Dataset) -> Tuple[np.ndarray, np.ndarray]:
    """Feature matrix F (N x M) and score vector s over the dataset, in record order."""
    features = np.empty((len(dataset), model.feature_dim))
    scores = np.empty(len(dataset))
    for i, record in enumerate(dataset.records):
        result = model.forward(record.image, record=False)
        features[i] = result.features
        scores[i] = result.score
    return features, scores


def run_confound_test(dataset: Dataset, model: ConvNetModel, glm_config: GlmConfig) -> ConfoundOutcome:
    names = list(glm_config.confounders)
    check_columns(dataset, names)
    features, scores = extract_features(model, dataset)
    confounders = dataset.covariate_matrix(names)
    mask = build_confound_mask(features, scores, confounders, glm_config.alpha,
                               bonferroni=glm_config.bonferroni, confounder_names=names)
    report = GlmReport.from_mask(
        mask,
        n_samples=len(dataset),
        bonferroni=glm_config.bonferroni,
        alpha_sweep=alpha_sweep(mask, len(names)),
        group_differences=confounder_group_differences(dataset, names),
    )
    return ConfoundOutcome(mask, report, features, scores)


def write_confound_outputs(outcome: ConfoundOutcome, dataset: Dataset, out: PathLike) -> Dict[str, Path]:
    out = Path(out)
    n_features = outcome.features.shape[1]
    feature_frame = pd.DataFrame(outcome.features, columns=[f"f_{j}" for j in range(n_features)])
    score_frame = pd.DataFrame({"id": dataset.ids(), "group": dataset.groups(), "score": outcome.scores})
    return {
        "features": _write_frame(feature_frame, out / FEATURES_FILE),
        "scores": _write_frame(score_frame, out / SCORES_FILE),
        "glm_report": write_report(outcome.report, out / GLM_REPORT_FILE),
        "mask": export.write_mask(outcome.mask.bits, out / MASK_FILE),
    }


def cmd_confound_test(data: PathLike, model_path: PathLike, glm_config: GlmConfig,
                      out: PathLike) -> ConfoundOutcome:
    dataset = load_dataset(data)
    check_columns(dataset, glm_config.confounders)
    model = load_model(model_path)
    outcome = run_confound_test(dataset, model, glm_config)
    write_confound_outputs(outcome, dataset, out)
    return outcome


# --- saliency ----------------------------------------------------------------

@dataclass
class SaliencyOutcome:
    maps: List[SaliencyMap]
    average: SaliencyMap
    group_averages: Dict[int, SaliencyMap] = field(default_factory=dict)


def run_saliency(model: ConvNetModel, dataset: Dataset, mask: Optional[np.ndarray],
                 saliency_config: SaliencyConfig) -> SaliencyOutcome:
    maps = compute_maps(model, list(dataset.images()), dataset.ids(), mask=mask,
                        workers=saliency_config.workers)
    average = average_saliency(maps)
    groups = per_group_average(maps, dataset.groups()) if saliency_config.per_group else {}
    logger.info("saliency.done", mode=average.mode, maps=len(maps),
                block_means=block_saliency_stats(average))
    return SaliencyOutcome(maps, average, groups)


def write_map(smap: SaliencyMap, out: Path, stem: str) -> Dict[str, Path]:
    comment = f"{smap.mode} saliency, max-normalized"
    return {
        f"{stem}_csv": export.write_grid_csv(smap.values, out / f"{stem}.csv"),
        f"{stem}_pgm": export.write_pgm(smap.values, out / f"{stem}.pgm", comment=comment),
    }


def write_saliency_outputs(outcome: SaliencyOutcome, out: PathLike, per_subject: bool = False) -> Dict[str, Path]:
    out = Path(out)
    paths = write_map(outcome.average, out, AVERAGE_STEM)
    for group, smap in outcome.group_averages.items():
        paths.update(write_map(smap, out, f"group_{group}"))
    if per_subject:
        for smap in outcome.maps:
            export.write_grid_csv(smap.values, out / "subjects" / f"{smap.subject_id}.csv")
        paths["subjects"] = out / "subjects"
    return paths


def cmd_saliency(data: PathLike, model_path: PathLike, mask: Optional[str], out: PathLike,
                 saliency_config: SaliencyConfig) -> SaliencyOutcome:
    """Full average map, or partial when ``mask`` (0/1 string, mask file or GLM report) is given."""
    dataset = load_dataset(data)
    model = load_model(model_path)
    bits = export.parse_mask(mask, model.feature_dim) if mask is not None else None
    outcome = run_saliency(model, dataset, bits, saliency_config)
    write_saliency_outputs(outcome, out, per_subject=saliency_config.per_subject)
    return outcome


# --- pipeline ----------------------------------------------------------------

def refactorization_crosscheck(model: ConvNetModel, dataset: Dataset, partial: SaliencyOutcome,
                               bits: np.ndarray, n_images: int) -> Optional[float]:
    """Largest |dummy-layer map - masked-adjoint map| over the first ``n_images`` records."""
    if n_images <= 0:
        return None
    deviation = 0.0
    for record, smap in zip(dataset.records[:n_images], partial.maps):
        refactorized = refactorize_model(model, record.image, bits, record.id)
        deviation = max(deviation, float(np.max(np.abs(refactorized.saliency_map(record.image).values
                                                         - smap.values))))
    return deviation


def _relative(paths: Dict[str, Path], root: Path, prefix: str) -> Dict[str, str]:
    return {f"{prefix}.{key}": path.relative_to(root).as_posix() for key, path in paths.items()}


def cmd_pipeline(config: PipelineConfig) -> RunReport:
    """
    Run synth, train, confound-test, both saliency modes and the report.

    Layout under ``pipeline.output_dir``::

        data/            manifest.json, data.csv
        model/           model.txt, model.loss.csv
        confound/        features.csv, scores.csv, glm_report.json, mask.txt
        saliency/full/   average.csv/.pgm (+ group and subject maps)
        saliency/partial/
        saliency_attenuation.csv/.pgm
        run_report.json
    """
    root = Path(config.pipeline.output_dir)
    seed = config.pipeline.seed
    artifacts: Dict[str, str] = {}
    timings: Dict[str, float] = {}
    logger.info("pipeline.start", seed=seed, output_dir=str(root))

    with run_stage("synth", timings):
        dataset = run_synth(config.data.n_per_group, seed)
        save_dataset(dataset, root / "data")
        artifacts["data"] = "data"

    with run_stage("train", timings):
        training = run_train(dataset, config.train, seed)
        artifacts.update(_relative(write_training(training, root / "model" / MODEL_FILE), root, "train"))
        enforce_gate(training.accuracy, config.train.accuracy_gate)
    model = training.model

    with run_stage("confound-test", timings):
        confound = run_confound_test(dataset, model, config.glm)
        artifacts.update(_relative(write_confound_outputs(confound, dataset, root / "confound"), root, "glm"))
    bits = confound.mask.bits

    with run_stage("saliency-full", timings):
        full = run_saliency(model, dataset, None, config.saliency)
        paths = write_saliency_outputs(full, root / "saliency" / "full", config.saliency.per_subject)
        artifacts.update(_relative(paths, root, "saliency_full"))

    with run_stage("saliency-partial", timings):
        partial = run_saliency(model, dataset, bits, config.saliency)
        paths = write_saliency_outputs(partial, root / "saliency" / "partial", config.saliency.per_subject)
        artifacts.update(_relative(paths, root, "saliency_partial"))

    with run_stage("crosscheck", timings):
        deviation = refactorization_crosscheck(model, dataset, partial, bits, config.saliency.crosscheck_images)

    with run_stage("feature-profile", timings):
        flagged = confound.mask.confounded_indices
        block_counts: Dict[str, int] = {}
        if flagged:
            profile = feature_block_profile(model, list(dataset.images()), features=flagged)
            for block in profile.values():
                key = block or "none"
                block_counts[key] = block_counts.get(key, 0) + 1
        block_counts = dict(sorted(block_counts.items()))

    with run_stage("report", timings):
        removed = attenuation_map(full.average, partial.average)
        artifacts.update(_relative(write_map(removed, root, "saliency_attenuation"), root, "attenuation"))
        artifacts["run_report"] = RUN_REPORT_FILE
        report = RunReport(
            seed=seed,
            sub_seeds={"synth": derive_seed(seed, "synth"), "init": training.init_seed,
                       "train": training.train_seed},
            n_records=len(dataset),
            training_accuracy=training.accuracy,
            loss_history=training.loss_history,
            alpha=confound.mask.alpha,
            effective_alpha=confound.mask.effective_alpha,
            confounders=list(config.glm.confounders),
            confounded_feature_count=confound.mask.confounded_count,
            confounded_features=flagged,
            confounded_feature_blocks=block_counts,
            block_means_full=BlockMeans(**block_saliency_stats(full.average)),
            block_means_partial=BlockMeans(**block_saliency_stats(partial.average)),
            attenuation_ratio_bc=attenuation_ratio(full.average, partial.average, ("B", "C")),
            retention_ratio_ad=retention_ratio(full.average, partial.average, ("A", "D")),
            attenuation_ratio_ad=attenuation_ratio(full.average, partial.average, ("A", "D")),
            refactorization_max_abs_diff=deviation,
            artifacts=dict(sorted(artifacts.items())),
        )
        write_report(report, root / RUN_REPORT_FILE)

    logger.info("pipeline.done", timings={k: round(v, 3) for k, v in timings.items()},
                attenuation_ratio_bc=report.attenuation_ratio_bc, retention_ratio_ad=report.retention_ratio_ad)
    return report
