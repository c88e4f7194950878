"""Training loop, evaluation metrics and the per-run log.

The log is a list of plain dicts (one per optimizer step, one per epoch) with
no timestamps, so two runs with the same config and seed produce identical
logs.
"""

from __future__ import annotations

import math
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np
import structlog
from pydantic import BaseModel, Field
from sklearn.metrics import accuracy_score, f1_score

from engine.optim import AdamW, WarmupCosineSchedule
from engine.tensor import no_grad
from models.dcgnet import DCGNetModel
from models.losses import ClassWeights, compute_losses, total_loss
from services.config import TrainConfig
from services.errors import DatasetError, DivergenceError, NumericError, TrainingAborted
from synthdata.records import Dataset, DatasetSplit

logger = structlog.get_logger(__name__)

STREAM_SHUFFLE = 5
METRIC_NAMES = ("diagnosis_accuracy", "diagnosis_f1", "concept_accuracy", "concept_f1")


class Metrics(BaseModel):
    """Diagnosis and concept metrics of one split."""

    diagnosis_accuracy: float = Field(..., ge=0.0, le=1.0)
    diagnosis_f1: float = Field(..., ge=0.0, le=1.0, description="Macro-F1 over classes")
    concept_accuracy: float = Field(..., ge=0.0, le=1.0, description="Over all (sample, concept)")
    concept_f1: float = Field(
        ..., ge=0.0, le=1.0, description="Macro-F1 over all concept-value nodes"
    )
    samples: int = Field(..., ge=1)


def macro_f1(truth: np.ndarray, predicted: np.ndarray) -> float:
    """Macro-F1 over classes present in truth or predictions."""
    return float(f1_score(truth, predicted, average="macro", zero_division=0))


def label_counts(
    split: DatasetSplit, n_classes: int, value_counts: list[int]
) -> tuple[np.ndarray, list[np.ndarray]]:
    diagnosis = np.bincount(split.labels, minlength=n_classes)
    concepts = [
        np.bincount(split.concepts[:, k], minlength=count) for k, count in enumerate(value_counts)
    ]
    return diagnosis, concepts


def predict(
    model: DCGNetModel, patches: np.ndarray, batch_size: int = 256
) -> tuple[np.ndarray, np.ndarray]:
    """Predicted diagnosis (N,) and predicted value per concept (N, K)."""
    diagnosis = []
    concepts = []
    with no_grad():
        for start in range(0, patches.shape[0], batch_size):
            out = model(patches[start : start + batch_size])
            diagnosis.append(np.argmax(out.logits.data, axis=1))
            concepts.append(
                np.stack([np.argmax(u.data, axis=1) for u in out.dca.concept_logits], axis=1)
            )
    return np.concatenate(diagnosis), np.concatenate(concepts)


def evaluate(model: DCGNetModel, split: DatasetSplit, batch_size: int = 256) -> Metrics:
    """Diagnosis metrics from the head, concept metrics from the pre-graph value logits.

    Raises:
        DatasetError: If the split is empty
    """
    if len(split) == 0:
        raise DatasetError("cannot evaluate an empty split")
    diagnosis, concepts = predict(model, split.patches, batch_size)
    offsets = np.asarray(model.dictionary.offsets)
    true_nodes = (split.concepts + offsets).reshape(-1)
    pred_nodes = (concepts + offsets).reshape(-1)
    return Metrics(
        diagnosis_accuracy=float(accuracy_score(split.labels, diagnosis)),
        diagnosis_f1=macro_f1(split.labels, diagnosis),
        concept_accuracy=float(accuracy_score(true_nodes, pred_nodes)),
        concept_f1=macro_f1(true_nodes, pred_nodes),
        samples=len(split),
    )


@dataclass
class TrainingResult:
    records: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_val: Metrics | None = None
    best_state: dict[str, np.ndarray] = field(default_factory=dict)


def class_weights_for(dataset: Dataset, config: TrainConfig) -> ClassWeights:
    value_counts = dataset.dictionary.value_counts
    if not config.class_balancing:
        return ClassWeights.uniform(dataset.n_classes, value_counts)
    diagnosis, concepts = label_counts(dataset.train, dataset.n_classes, value_counts)
    return ClassWeights.from_counts(diagnosis, concepts, config.weight_clamp)


def train(
    model: DCGNetModel,
    dataset: Dataset,
    config: TrainConfig,
    on_improve: Callable[[int, Metrics], None] | None = None,
    eval_batch_size: int = 256,
) -> TrainingResult:
    """Optimise every parameter with AdamW under a warmup-cosine schedule.

    Validation macro-F1 is measured after every epoch; the best state is kept
    and loaded back into ``model`` when training finishes.

    Raises:
        DatasetError: If the train or validation split is empty
        TrainingAborted: If a loss component diverges or a numeric guard trips
    """
    train_split, val_split = dataset.train, dataset.val
    if len(train_split) == 0 or len(val_split) == 0:
        raise DatasetError("training needs non-empty train and val splits")

    log = logger.bind(seed=config.seed)
    weights = class_weights_for(dataset, config)
    optimizer = AdamW(
        model.parameters(),
        lr=config.learning_rate,
        betas=config.betas,
        eps=config.eps,
        weight_decay=config.weight_decay,
    )
    steps_per_epoch = math.ceil(len(train_split) / config.batch_size)
    schedule = WarmupCosineSchedule(
        config.learning_rate, config.epochs * steps_per_epoch, config.warmup_fraction
    )
    rng = np.random.default_rng((config.seed, STREAM_SHUFFLE))
    result = TrainingResult(best_state=model.state_dict())
    best_f1 = -1.0
    step = 0

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(train_split))
        epoch_losses = []
        try:
            for start in range(0, len(order), config.batch_size):
                batch = train_split.subset(order[start : start + config.batch_size])
                lr = schedule.lr_at(step)
                output = model(batch.patches)
                parts = compute_losses(
                    output, batch.concepts, batch.labels, weights, config.label_smoothing
                )
                loss = total_loss(parts, config.loss_weights)
                optimizer.zero_grad()
                loss.backward()
                optimizer.step(lr)
                result.records.append(
                    {
                        "kind": "step",
                        "epoch": epoch,
                        "step": step,
                        "lr": lr,
                        **parts.values(),
                        "total": loss.item(),
                    }
                )
                epoch_losses.append(loss.item())
                step += 1
            val = evaluate(model, val_split, eval_batch_size)
        except (DivergenceError, NumericError) as err:
            log.error(
                "Training aborted",
                epoch=epoch,
                step=step,
                last_good_epoch=result.best_epoch,
                error=str(err),
            )
            model.load_state_dict(result.best_state)
            raise TrainingAborted(
                str(err), result.best_state, result.records, result.best_epoch
            ) from err

        improved = val.diagnosis_f1 > best_f1
        result.records.append(
            {
                "kind": "epoch",
                "epoch": epoch,
                "train_loss": float(np.mean(epoch_losses)),
                "improved": improved,
                **{f"val_{name}": value for name, value in val.model_dump().items()},
            }
        )
        log.info(
            "Epoch completed",
            epoch=epoch,
            train_loss=float(np.mean(epoch_losses)),
            val_diagnosis_f1=val.diagnosis_f1,
            val_concept_f1=val.concept_f1,
        )
        if improved:
            best_f1 = val.diagnosis_f1
            result.best_epoch = epoch
            result.best_val = val
            result.best_state = model.state_dict()
            if on_improve is not None:
                on_improve(epoch, val)

    model.load_state_dict(result.best_state)
    return result
