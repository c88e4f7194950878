"""Gradient self-tests: every primitive suite plus the full training objective.

The composite check builds a tiny model (two binary concepts, four patches,
two samples) and compares reverse-mode and finite-difference gradients of the
summed four-part loss for every parameter. The alignment targets are detached
in training, so they are computed once and held fixed while perturbing.
"""

from __future__ import annotations

import numpy as np
import structlog

from engine.gradcheck import (
    DEFAULT_STEP,
    DEFAULT_TOLERANCE,
    OP_SUITES,
    GradCheckResult,
    check_leaves,
    check_op,
)
from engine.tensor import Tensor, no_grad
from models.dcgnet import DCGNetModel
from models.encoders import HashTextEncoder
from models.graph import build_mask
from models.losses import (
    LossBreakdown,
    binary_cross_entropy,
    confidence_targets,
    loss_concept,
    loss_cons,
    loss_diag,
    total_loss,
)
from models.schema import ConceptDictionary, ConceptSpec, PrototypeBank, build_prototypes
from services.config import ModelConfig
from services.errors import ConfigError

logger = structlog.get_logger(__name__)

COMPOSITE = "composite"


def tiny_dictionary() -> ConceptDictionary:
    return ConceptDictionary(
        concepts=[
            ConceptSpec(name="size", values=["small", "large"]),
            ConceptSpec(name="shape", values=["round", "irregular"]),
        ]
    )


def check_composite(
    seed: int = 0,
    step: float = DEFAULT_STEP,
    tolerance: float = DEFAULT_TOLERANCE,
    corrupt: bool = False,
) -> GradCheckResult:
    """Finite-difference check of the whole objective over every parameter."""
    rng = np.random.default_rng(seed)
    dictionary = tiny_dictionary()
    nodes = dictionary.num_nodes
    config = ModelConfig(d_t=8, d_v=8, heads=2, graph_layers=2, k_top=1)
    bank = PrototypeBank(build_prototypes(dictionary, HashTextEncoder(config.d_t, seed=seed)))
    # distinct prior values keep the top-k selection away from ties
    prior = rng.uniform(0.2, 1.0, size=(nodes, nodes)) * build_mask(dictionary)
    model = DCGNetModel(dictionary, bank, prior, config, d_in=6, n_classes=3, seed=seed)
    assert model.graph is not None
    model.graph.b.data = rng.normal(0.0, 0.5, size=(nodes, nodes))

    patches = Tensor(rng.normal(size=(2, 4, 6)))
    concepts = np.array([[0, 1], [1, 0]])
    labels = np.array([2, 0])
    diagnosis_weights = rng.uniform(0.5, 2.0, size=3)
    concept_weights = [rng.uniform(0.5, 2.0, size=count) for count in dictionary.value_counts]
    with no_grad():
        targets = confidence_targets(model(patches).dca.concept_logits)

    def objective() -> Tensor:
        out = model(patches)
        logits = out.dca.concept_logits
        relevance = out.dca.concept_relevance
        parts = LossBreakdown(
            align=binary_cross_entropy(relevance, targets),
            concept=loss_concept(logits, concepts, concept_weights),
            cons=loss_cons(logits, relevance),
            diag=loss_diag(out.logits, labels, 0.05, diagnosis_weights),
        )
        return total_loss(parts)

    leaves = list(model.named_parameters())
    return check_leaves(COMPOSITE, objective, leaves, step, tolerance, corrupt)


def suite_names() -> list[str]:
    return [*OP_SUITES, COMPOSITE]


def run_gradchecks(
    op: str | None = None, corrupt: bool = False, seed: int = 0
) -> list[GradCheckResult]:
    """Run one named suite, or every primitive suite followed by the composite.

    Raises:
        ConfigError: If ``op`` names no suite
    """
    if op is not None and op not in suite_names():
        raise ConfigError(f"unknown gradient check {op!r}; choose from {', '.join(suite_names())}")
    names = [op] if op is not None else suite_names()
    results = []
    for name in names:
        if name == COMPOSITE:
            result = check_composite(seed=seed, corrupt=corrupt)
        else:
            result = check_op(name, seed=seed, corrupt=corrupt)
        log = logger.bind(check=name)
        if result.passed:
            log.debug("Gradient check passed", max_error=result.max_error)
        else:
            log.warning(
                "Gradient check failed", max_error=result.max_error, location=result.location
            )
        results.append(result)
    return results
