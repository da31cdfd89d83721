"""
Mini-batch momentum training of the ConvNet on binary cross-entropy.

Per-image tapes are differentiated from the logit with adjoint (s - y) / |batch|,
which is d(mean BCE)/d(logit); parameter adjoints are summed over the batch.
The shuffle stream is seeded, so (model, dataset, config) fixes the whole
parameter trajectory.
"""

from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np
import structlog

from .convnet import ConvNetModel
from ..autodiff.tape import backward
from ..data.blob_config import score_to_label
from ..data.synthdata import Dataset
from ..utils.config_manager import TrainConfig
from ..utils.errors import ContractError, TrainingDivergedError

logger = structlog.get_logger(__name__)

__all__ = ["TrainConfig", "TrainingResult", "train", "training_accuracy", "bce_loss", "l2_penalty"]


@dataclass
class TrainingResult:
    """Trained model and its per-epoch mean loss."""
    model: ConvNetModel
    loss_history: List[float] = field(default_factory=list)


def bce_loss(logit: float, target: float) -> float:
    """-[y log s + (1 - y) log(1 - s)] with s = sigmoid(logit), evaluated stably."""
    return float(np.logaddexp(0.0, logit) - target * logit)


def _penalized(name: str) -> bool:
    return name.startswith("predictor.") and name.endswith(".weight")


def l2_penalty(parameters: Dict[str, np.ndarray], l2: float) -> float:
    """lambda / 2 * sum of squared predictor weights."""
    if l2 <= 0.0:
        return 0.0
    return 0.5 * l2 * sum(float(np.sum(value ** 2)) for name, value in parameters.items() if _penalized(name))


def train(model: ConvNetModel, dataset: Dataset, config: TrainConfig) -> TrainingResult:
    """
    Train a copy of ``model`` on every record of ``dataset``.

    Raises:
        TrainingDivergedError: the epoch loss or any parameter became non-finite.
    """
    if len(dataset) == 0:
        raise ContractError("cannot train on an empty dataset")
    images = dataset.images()
    targets = dataset.targets()
    n_samples = len(targets)
    trained = model.copy()
    params = trained.parameters
    velocity = {name: np.zeros_like(value) for name, value in params.items()}
    rng = np.random.default_rng(config.seed if config.seed is not None else 0)
    history: List[float] = []

    logger.info("train.start", samples=n_samples, epochs=config.epochs, batch_size=config.batch_size,
                learning_rate=config.learning_rate, momentum=config.momentum, l2=config.l2)

    for epoch in range(config.epochs):
        order = rng.permutation(n_samples)
        epoch_loss = 0.0
        for start in range(0, n_samples, config.batch_size):
            batch = order[start:start + config.batch_size]
            grads = {name: np.zeros_like(value) for name, value in params.items()}
            batch_loss = 0.0
            for index in batch:
                result = trained.forward(images[index])
                logit = result.logit
                target = targets[index]
                batch_loss += bce_loss(logit, target)
                adjoint = np.array([(result.score - target) / len(batch)])
                gradients = backward(result.tape, result.logit_node, seed=adjoint)
                for name, node in result.parameter_nodes.items():
                    grads[name] += gradients[node]
            epoch_loss += batch_loss + len(batch) * l2_penalty(params, config.l2)

            if config.l2 > 0.0:
                for name in grads:
                    if _penalized(name):
                        grads[name] += config.l2 * params[name]
            for name in params:
                velocity[name] = config.momentum * velocity[name] - config.learning_rate * grads[name]
                params[name] = params[name] + velocity[name]

        mean_loss = epoch_loss / n_samples
        if not np.isfinite(mean_loss) or not all(np.isfinite(v).all() for v in params.values()):
            logger.error("train.diverged", epoch=epoch + 1, loss=mean_loss)
            raise TrainingDivergedError(epoch + 1, mean_loss)
        history.append(mean_loss)
        logger.info("train.epoch", epoch=epoch + 1, loss=round(mean_loss, 6))

    trained.metadata = trained.metadata.model_copy(update={
        "train_seed": config.seed,
        "epochs_run": model.metadata.epochs_run + config.epochs,
        "final_loss": history[-1] if history else model.metadata.final_loss,
    })
    return TrainingResult(trained, history)


def training_accuracy(model: ConvNetModel, dataset: Dataset) -> float:
    """Fraction of records whose thresholded score (s >= 0.5 -> Group 2) matches the label."""
    if len(dataset) == 0:
        return 0.0
    hits = sum(
        score_to_label(model.score(record.image)) == record.group
        for record in dataset.records
    )
    return hits / len(dataset)
