"""Parametric concept graph over concept-value nodes.

The adjacency is rebuilt from the learnable scores ``B`` on every forward pass::

    unnorm = softplus(B) * R * A0        # A0: PPMI prior, R: structural mask
    sparse = top_k(unnorm) per row       # ties go to the lower column index
    stochastic = sparse / row_sum        # all-zero rows stay zero

and ``L`` message-passing layers update node states with
``H <- relu(H @ W_self + stochastic @ H @ W_neigh)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import structlog

from engine import tensor as T
from engine.module import Module, Parameter, xavier_uniform
from engine.tensor import Tensor
from models.schema import ConceptDictionary
from services.errors import ConfigError, DatasetError, DimensionError, LabelError

logger = structlog.get_logger(__name__)


@dataclass
class PPMIPrior:
    """Symmetric non-negative co-occurrence prior with its counting metadata."""

    matrix: np.ndarray
    samples: int
    marginals: np.ndarray
    smoothing: float


def one_hot_nodes(labels: np.ndarray, dictionary: ConceptDictionary) -> np.ndarray:
    """Indicator matrix (N, M) of the annotated value node of every concept.

    Raises:
        LabelError: If a label is outside its concept's value range
    """
    labels = np.asarray(labels)
    if labels.ndim != 2 or labels.shape[1] != dictionary.num_concepts:
        raise LabelError(
            f"expected labels of shape [N, {dictionary.num_concepts}], got {list(labels.shape)}"
        )
    counts = np.asarray(dictionary.value_counts)
    if np.any(labels < 0) or np.any(labels >= counts):
        raise LabelError("concept label outside its value range")
    indicator = np.zeros((labels.shape[0], dictionary.num_nodes))
    nodes = labels.astype(np.int64) + np.asarray(dictionary.offsets)
    np.put_along_axis(indicator, nodes, 1.0, axis=1)
    return indicator


def build_ppmi(
    labels: np.ndarray, dictionary: ConceptDictionary, smoothing: float = 1.0
) -> PPMIPrior:
    """Positive pointwise mutual information between concept-value nodes.

    With N samples, node counts n_i and pair counts n_ij::

        p_i  = (n_i  + eps) / (N + 2 eps)
        p_ij = (n_ij + eps) / (N + 2 eps)
        A0_ij = max(0, ln(p_ij / (p_i p_j))),  A0_ii = 0

    Undefined or negative-infinite logs are clamped to 0.
    """
    if smoothing < 0.0:
        raise ConfigError(f"smoothing must be non-negative, got {smoothing}")
    indicator = one_hot_nodes(labels, dictionary)
    samples = indicator.shape[0]
    if samples == 0:
        raise DatasetError("cannot build a PPMI prior from zero samples")
    node_counts = indicator.sum(axis=0)
    pair_counts = indicator.T @ indicator
    denom = samples + 2.0 * smoothing
    p_node = (node_counts + smoothing) / denom
    p_pair = (pair_counts + smoothing) / denom
    with np.errstate(divide="ignore", invalid="ignore"):
        pmi = np.log(p_pair / np.outer(p_node, p_node))
    pmi[~np.isfinite(pmi)] = 0.0
    ppmi = np.maximum(pmi, 0.0)
    np.fill_diagonal(ppmi, 0.0)
    return PPMIPrior(matrix=ppmi, samples=samples, marginals=node_counts, smoothing=smoothing)


def build_mask(dictionary: ConceptDictionary) -> np.ndarray:
    """1 for every ordered pair of nodes from different concepts, else 0."""
    concept = dictionary.concept_of_nodes()
    return (concept[:, None] != concept[None, :]).astype(np.float64)


def edge_weights(b: Tensor, mask: np.ndarray, prior: np.ndarray) -> Tensor:
    """``softplus(B) * R * A0``; gradients reach ``B`` only."""
    if b.shape != mask.shape or b.shape != prior.shape or b.ndim != 2:
        raise DimensionError(
            f"edge weights: B {list(b.shape)}, R {list(mask.shape)}, A0 {list(prior.shape)}"
        )
    return T.mul(T.softplus(b), Tensor(mask * prior))


def top_k_mask(values: np.ndarray, k_top: int) -> np.ndarray:
    """Indicator of the ``k_top`` largest entries per row; lower index wins ties."""
    if k_top < 1:
        raise ConfigError(f"k_top must be at least 1, got {k_top}")
    order = np.argsort(-values, axis=-1, kind="stable")[..., :k_top]
    mask = np.zeros_like(values)
    np.put_along_axis(mask, order, 1.0, axis=-1)
    return mask


def top_k_sparsify(unnorm: Tensor, k_top: int) -> Tensor:
    """Zero all but the ``k_top`` strongest entries of every row.

    The selection is treated as constant, so gradients pass through kept
    entries only.
    """
    return T.mul(unnorm, Tensor(top_k_mask(unnorm.data, k_top)))


def row_normalize(sparse: Tensor) -> Tensor:
    return T.row_normalize(sparse)


@dataclass
class AdjacencyPipelineOutput:
    unnorm: Tensor
    sparse: Tensor
    degrees: np.ndarray
    stochastic: Tensor


class GraphLayer(Module):
    """One message-passing layer: self path plus neighbour path."""

    def __init__(self, d_v: int, rng: np.random.Generator) -> None:
        self.w_self = Parameter(xavier_uniform(rng, d_v, d_v))
        self.w_neigh = Parameter(xavier_uniform(rng, d_v, d_v))

    def __call__(self, h: Tensor, stochastic: Tensor) -> Tensor:
        neighbours = T.matmul(stochastic, T.matmul(h, self.w_neigh))
        return T.relu(T.add(T.matmul(h, self.w_self), neighbours))


def propagate(h0: Tensor, stochastic: Tensor, layers: list[GraphLayer]) -> Tensor:
    """Run every layer in order over node states (B, M, d) or (M, d)."""
    if not layers:
        raise ConfigError("propagate needs at least one layer")
    nodes = stochastic.shape[0]
    if stochastic.shape != (nodes, nodes) or h0.shape[-2] != nodes:
        raise DimensionError(
            f"propagate: adjacency {list(stochastic.shape)} does not match states {list(h0.shape)}"
        )
    h = h0
    for layer in layers:
        h = layer(h, stochastic)
    return h


class ConceptGraph(Module):
    """Learnable scores, fixed prior and mask, and the message-passing layers."""

    def __init__(
        self,
        dictionary: ConceptDictionary,
        prior: np.ndarray,
        d_v: int,
        layers: int,
        k_top: int,
        rng: np.random.Generator,
    ) -> None:
        nodes = dictionary.num_nodes
        if prior.shape != (nodes, nodes):
            raise DimensionError(
                f"prior shape {list(prior.shape)} does not match {nodes} nodes"
            )
        if layers < 1:
            raise ConfigError("graph needs at least one layer")
        if k_top < 1:
            raise ConfigError(f"k_top must be at least 1, got {k_top}")
        if k_top > nodes - 1:
            logger.warning("k_top clamped", requested=k_top, clamped=max(nodes - 1, 1))
            k_top = max(nodes - 1, 1)
        self.k_top = k_top
        self.prior = np.asarray(prior, dtype=np.float64)
        self.mask = build_mask(dictionary)
        self.b = Parameter(np.zeros((nodes, nodes)))
        self.layers = [GraphLayer(d_v, rng) for _ in range(layers)]

    def adjacency(self) -> AdjacencyPipelineOutput:
        unnorm = edge_weights(self.b, self.mask, self.prior)
        sparse = top_k_sparsify(unnorm, self.k_top)
        stochastic = row_normalize(sparse)
        return AdjacencyPipelineOutput(
            unnorm=unnorm,
            sparse=sparse,
            degrees=sparse.data.sum(axis=1),
            stochastic=stochastic,
        )

    def __call__(self, h0: Tensor) -> tuple[Tensor, AdjacencyPipelineOutput]:
        pipeline = self.adjacency()
        return propagate(h0, pipeline.stochastic, self.layers), pipeline
