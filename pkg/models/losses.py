"""Training objective: alignment, concept, consistency and diagnosis losses.

Every loss is the batch mean of a per-sample loss. Class weights multiply the
per-sample term of the sample's true class and are not renormalized.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from engine import tensor as T
from engine.tensor import Tensor
from models.dcgnet import ForwardOutput
from services.config import LossWeights
from services.errors import DivergenceError, LabelError, NumericError

LOG_FLOOR = 1e-12
COMPONENTS = ("align", "concept", "cons", "diag")


def class_weights(counts: np.ndarray, clamp: tuple[float, float] = (0.1, 10.0)) -> np.ndarray:
    """Balanced weights ``N / (M * count)`` clamped to ``clamp``.

    Classes that never occur get the upper clamp.
    """
    counts = np.asarray(counts, dtype=np.float64)
    total = counts.sum()
    with np.errstate(divide="ignore"):
        raw = np.where(counts > 0, total / (counts.size * np.maximum(counts, 1e-300)), np.inf)
    return np.clip(raw, clamp[0], clamp[1])


@dataclass
class ClassWeights:
    """Per-class weights of the diagnosis loss and of every concept's loss."""

    diagnosis: np.ndarray
    concepts: list[np.ndarray]

    @classmethod
    def uniform(cls, n_classes: int, value_counts: Sequence[int]) -> ClassWeights:
        return cls(np.ones(n_classes), [np.ones(count) for count in value_counts])

    @classmethod
    def from_counts(
        cls,
        diagnosis_counts: np.ndarray,
        concept_counts: Sequence[np.ndarray],
        clamp: tuple[float, float] = (0.1, 10.0),
    ) -> ClassWeights:
        return cls(
            class_weights(diagnosis_counts, clamp),
            [class_weights(counts, clamp) for counts in concept_counts],
        )


def _check_labels(labels: np.ndarray, classes: int, what: str) -> np.ndarray:
    labels = np.asarray(labels)
    if np.any(labels < 0) or np.any(labels >= classes):
        raise LabelError(f"{what} label outside [0, {classes})")
    return labels.astype(np.int64)


def _batch_mean(total: Tensor, batch: int, count: int = 1) -> Tensor:
    return T.scale(total, 1.0 / (batch * count))


def confidence_targets(logits: Sequence[Tensor]) -> np.ndarray:
    """Detached max softmax probability of every concept head, shape (B, K)."""
    columns = []
    for u in logits:
        shifted = np.exp(u.data - u.data.max(axis=-1, keepdims=True))
        columns.append((shifted / shifted.sum(axis=-1, keepdims=True)).max(axis=-1))
    return np.stack(columns, axis=1)


def binary_cross_entropy(p: Tensor, target: np.ndarray) -> Tensor:
    """Mean of ``-(t ln p + (1 - t) ln(1 - p))`` over every entry of (B, K).

    Both logs are floored at 1e-12, so a saturated ``p`` of exactly 0 or 1 gives a
    large finite loss with zero gradient through the floored term.
    """
    batch, concepts = p.shape
    positive = T.mul(T.log(T.clamp_min(p, LOG_FLOOR)), Tensor(target))
    negative = T.mul(T.log(T.clamp_min(T.sub(1.0, p), LOG_FLOOR)), Tensor(1.0 - target))
    return T.neg(_batch_mean(T.reduce_sum(T.add(positive, negative)), batch, concepts))


def loss_align(concept_relevance: Tensor, logits: Sequence[Tensor]) -> Tensor:
    """BCE between pooled relevance (B, K) and the heads' detached confidence.

    A relevance that saturates to exactly 0 or 1 is scored through the floored
    logs of ``binary_cross_entropy`` instead of aborting the run.

    Raises:
        NumericError: If any relevance is not finite or lies outside [0, 1]
    """
    alpha = concept_relevance.data
    if not np.all((alpha >= 0.0) & (alpha <= 1.0)):
        raise NumericError("alignment loss needs finite relevance in [0, 1]")
    return binary_cross_entropy(concept_relevance, confidence_targets(logits))


def loss_concept(
    logits: Sequence[Tensor],
    concepts: np.ndarray,
    weights: Sequence[np.ndarray] | None = None,
) -> Tensor:
    """Class-weighted cross-entropy of every value head, averaged over concepts."""
    concepts = np.asarray(concepts)
    batch = concepts.shape[0]
    terms = []
    for k, u in enumerate(logits):
        width = u.shape[-1]
        labels = _check_labels(concepts[:, k], width, f"concept {k}")
        w = np.ones(width) if weights is None else np.asarray(weights[k])
        coef = np.zeros((batch, width))
        coef[np.arange(batch), labels] = w[labels]
        terms.append(T.reduce_sum(T.mul(T.log_softmax(u, axis=-1), Tensor(coef))))
    total = terms[0]
    for term in terms[1:]:
        total = T.add(total, term)
    return T.neg(_batch_mean(total, batch, len(logits)))


def symmetric_kl(p: Tensor, q: Tensor) -> Tensor:
    """Batch mean of ``0.5 * (KL(p||q) + KL(q||p))`` over rows of (B, K) distributions.

    Written as ``0.5 * sum((p - q) * (log p - log q))`` with logs floored at 1e-12.
    """
    log_p = T.log(T.clamp_min(p, LOG_FLOOR))
    log_q = T.log(T.clamp_min(q, LOG_FLOOR))
    total = T.reduce_sum(T.mul(T.sub(p, q), T.sub(log_p, log_q)))
    return T.scale(total, 0.5 / p.shape[0])


def consistency_distributions(
    logits: Sequence[Tensor], concept_relevance: Tensor
) -> tuple[Tensor, Tensor]:
    """Text-to-image and image-to-text distributions over concepts.

    The former is a softmax over each head's maximum logit, the latter the
    pooled relevance normalized to sum to one.
    """
    batch = concept_relevance.shape[0]
    scores = T.concat([T.reshape(T.row_max(u), (batch, 1)) for u in logits], axis=1)
    return T.softmax(scores, axis=-1), T.row_normalize(concept_relevance)


def loss_cons(logits: Sequence[Tensor], concept_relevance: Tensor) -> Tensor:
    p_t2i, p_i2t = consistency_distributions(logits, concept_relevance)
    return symmetric_kl(p_t2i, p_i2t)


def loss_diag(
    logits: Tensor,
    labels: np.ndarray,
    smoothing: float = 0.0,
    weights: np.ndarray | None = None,
) -> Tensor:
    """Class-weighted cross-entropy against label-smoothed targets.

    The target puts ``1 - s`` on the true class and ``s / (C - 1)`` elsewhere.
    """
    batch, classes = logits.shape
    labels = _check_labels(labels, classes, "diagnosis")
    target = np.full((batch, classes), smoothing / (classes - 1))
    target[np.arange(batch), labels] = 1.0 - smoothing
    w = np.ones(classes) if weights is None else np.asarray(weights)
    coef = target * w[labels][:, None]
    total = T.reduce_sum(T.mul(T.log_softmax(logits, axis=-1), Tensor(coef)))
    return T.neg(_batch_mean(total, batch))


@dataclass
class LossBreakdown:
    align: Tensor
    concept: Tensor
    cons: Tensor
    diag: Tensor

    def components(self) -> dict[str, Tensor]:
        return {name: getattr(self, name) for name in COMPONENTS}

    def values(self) -> dict[str, float]:
        return {name: part.item() for name, part in self.components().items()}


def total_loss(parts: LossBreakdown, weights: LossWeights | None = None) -> Tensor:
    """Sum of the four components, each optionally weighted.

    Raises:
        DivergenceError: Naming the first non-finite component
    """
    for name, part in parts.components().items():
        value = part.item()
        if not math.isfinite(value):
            raise DivergenceError(name, value)
    total: Tensor | None = None
    for name, part in parts.components().items():
        factor = 1.0 if weights is None else float(getattr(weights, name))
        term = part if factor == 1.0 else T.scale(part, factor)
        total = term if total is None else T.add(total, term)
    assert total is not None
    return total


def compute_losses(
    output: ForwardOutput,
    concepts: np.ndarray,
    labels: np.ndarray,
    weights: ClassWeights,
    smoothing: float,
) -> LossBreakdown:
    logits = output.dca.concept_logits
    relevance = output.dca.concept_relevance
    return LossBreakdown(
        align=loss_align(relevance, logits),
        concept=loss_concept(logits, concepts, weights.concepts),
        cons=loss_cons(logits, relevance),
        diag=loss_diag(output.logits, labels, smoothing, weights.diagnosis),
    )
