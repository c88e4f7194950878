"""Dual cross-attention between concept-value prototypes and visual tokens.

Shapes use B for the batch, M for concept-value nodes, P for patches and d
for the visual width. Prototype queries are shared across the batch.

- text-to-image: prototypes attend over ``[CLS; patches]`` and collect local
  evidence (B, M, d) plus per-node patch attention maps.
- image-to-text: the CLS token scores every prototype through a sigmoid gate,
  giving an independent relevance in (0, 1) per node.
- fusion gates each evidence row by its relevance; value heads read the
  mean-pooled rows of every concept.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from engine import tensor as T
from engine.module import Linear, Module, Parameter, xavier_uniform
from engine.tensor import Tensor
from models.schema import ConceptDictionary
from services.errors import ConfigError, DimensionError


@dataclass
class VisualTokens:
    """Global token ``cls`` (B, d) and patch tokens ``patches`` (B, P, d)."""

    cls: Tensor
    patches: Tensor

    def __post_init__(self) -> None:
        shape = self.patches.shape
        if self.patches.ndim != 3 or self.cls.shape != (shape[0], shape[2]):
            raise DimensionError(
                f"visual tokens: cls {list(self.cls.shape)} "
                f"does not match patches {list(self.patches.shape)}"
            )
        if self.patches.shape[1] < 1:
            raise DimensionError("visual tokens need at least one patch")

    @property
    def width(self) -> int:
        return self.patches.shape[2]

    def sequence(self) -> Tensor:
        """The (B, P + 1, d) key/value sequence with CLS first."""
        batch, _, width = self.patches.shape
        return T.concat([T.reshape(self.cls, (batch, 1, width)), self.patches], axis=1)


class PatchEncoder(Module):
    """Trainable stand-in for the image backbone.

    Each raw patch goes through an affine map and ReLU; the CLS token is the
    mean of the encoded patches passed through a second affine map.
    """

    def __init__(self, d_in: int, d_v: int, rng: np.random.Generator) -> None:
        self.d_in = d_in
        self.patch_proj = Linear(d_in, d_v, rng)
        self.cls_proj = Linear(d_v, d_v, rng)

    def __call__(self, patches: Tensor) -> VisualTokens:
        if patches.ndim != 3 or patches.shape[2] != self.d_in:
            raise DimensionError(
                f"patch encoder: expected [B, P, {self.d_in}], got {list(patches.shape)}"
            )
        encoded = T.relu(self.patch_proj(patches))
        cls = self.cls_proj(T.reduce_mean(encoded, axis=1))
        return VisualTokens(cls=cls, patches=encoded)


class AttentionResult(NamedTuple):
    output: Tensor
    weights: np.ndarray


class MultiHeadAttention(Module):
    """Scaled dot-product attention with ``heads`` heads of width d / heads."""

    def __init__(self, d_v: int, heads: int, rng: np.random.Generator) -> None:
        if heads < 1 or d_v % heads != 0:
            raise ConfigError(f"heads ({heads}) must divide d_v ({d_v})")
        self.d_v = d_v
        self.heads = heads
        self.w_q = Linear(d_v, d_v, rng)
        self.w_k = Linear(d_v, d_v, rng)
        self.w_v = Linear(d_v, d_v, rng)
        self.w_o = Linear(d_v, d_v, rng)

    @property
    def head_width(self) -> int:
        return self.d_v // self.heads

    def __call__(self, queries: Tensor, sequence: Tensor) -> AttentionResult:
        """Attend from ``queries`` (M, d) or (B, M, d) over ``sequence`` (B, S, d).

        Returns the (B, M, d) output and the attention weights (B, heads, M, S).
        """
        if queries.shape[-1] != self.d_v or sequence.shape[-1] != self.d_v:
            raise DimensionError(
                f"attention: widths {queries.shape[-1]} and {sequence.shape[-1]} "
                f"must equal {self.d_v}"
            )
        q = self.w_q(queries)
        k = self.w_k(sequence)
        v = self.w_v(sequence)
        scale = 1.0 / math.sqrt(self.head_width)
        outputs = []
        weights = []
        for head in range(self.heads):
            cols = list(range(head * self.head_width, (head + 1) * self.head_width))
            q_h = T.gather(q, cols, axis=-1)
            k_h = T.gather(k, cols, axis=-1)
            v_h = T.gather(v, cols, axis=-1)
            scores = T.scale(T.matmul(q_h, T.transpose(k_h)), scale)
            attn = T.softmax(scores, axis=-1)
            outputs.append(T.matmul(attn, v_h))
            weights.append(attn.data)
        merged = outputs[0] if self.heads == 1 else T.concat(outputs, axis=-1)
        return AttentionResult(self.w_o(merged), np.stack(weights, axis=1))


class T2IResult(NamedTuple):
    evidence: Tensor
    attn_maps: np.ndarray
    head_maps: np.ndarray


def _patch_maps(weights: np.ndarray) -> np.ndarray:
    """Drop the CLS column and renormalize over patch positions."""
    patches = weights[..., 1:]
    return patches / patches.sum(axis=-1, keepdims=True)


def t2i_attention(
    prototypes: Tensor, tokens: VisualTokens, mha: MultiHeadAttention
) -> T2IResult:
    """Prototype queries over the full token sequence.

    Returns evidence (B, M, d), head-averaged patch maps (B, M, P) and the
    per-head patch maps (B, heads, M, P).
    """
    if prototypes.ndim != 2 or prototypes.shape[1] != tokens.width:
        raise DimensionError(
            f"t2i: prototypes {list(prototypes.shape)} do not match token width {tokens.width}"
        )
    result = mha(prototypes, tokens.sequence())
    head_maps = _patch_maps(result.weights)
    attn_maps = _patch_maps(result.weights.mean(axis=1))
    return T2IResult(result.output, attn_maps, head_maps)


def i2t_relevance(cls: Tensor, prototypes: Tensor, key_proj: Tensor, tau: float) -> Tensor:
    """Independent sigmoid gates ``sigmoid(cls @ (prototypes @ K)^T / tau)`` of shape (B, M)."""
    if tau <= 0.0:
        raise ConfigError(f"tau must be positive, got {tau}")
    if cls.shape[-1] != prototypes.shape[-1] or key_proj.shape != (prototypes.shape[-1],) * 2:
        raise DimensionError(
            f"i2t: cls {list(cls.shape)}, prototypes {list(prototypes.shape)}, "
            f"key projection {list(key_proj.shape)}"
        )
    keys = T.matmul(prototypes, key_proj)
    logits = T.scale(T.matmul(cls, T.transpose(keys)), 1.0 / tau)
    return T.sigmoid(logits)


def fuse(evidence: Tensor, relevance: Tensor) -> Tensor:
    """Gate evidence row m by relevance m."""
    return T.scale_rows(evidence, relevance)


def concept_logits(
    fused: Tensor,
    relevance: Tensor,
    dictionary: ConceptDictionary,
    value_heads: list[Linear],
) -> tuple[list[Tensor], Tensor]:
    """Per-concept value logits and pooled relevance.

    For every concept the rows of its value nodes are mean-pooled and passed
    through that concept's head; relevance is mean-pooled the same way.

    Returns:
        ``[u_k]`` with shapes (B, M_k) and pooled relevance (B, K)
    """
    if fused.shape[1] != dictionary.num_nodes:
        raise DimensionError(
            f"concept logits: {fused.shape[1]} nodes, dictionary has {dictionary.num_nodes}"
        )
    if len(value_heads) != dictionary.num_concepts:
        raise DimensionError(
            f"concept logits: {len(value_heads)} heads for {dictionary.num_concepts} concepts"
        )
    batch = fused.shape[0]
    logits = []
    pooled = []
    for k, head in enumerate(value_heads):
        nodes = dictionary.value_nodes(k)
        c_k = T.reduce_mean(T.gather(fused, nodes, axis=1), axis=1)
        logits.append(head(c_k))
        alpha_k = T.reduce_mean(T.gather(relevance, nodes, axis=1), axis=1)
        pooled.append(T.reshape(alpha_k, (batch, 1)))
    return logits, T.concat(pooled, axis=1)


def predicted_value_probs(logits: list[Tensor]) -> list[Tensor]:
    return [T.softmax(u, axis=-1) for u in logits]


@dataclass
class DCAOutput:
    """Everything the dual cross-attention stage produces for a batch."""

    tokens: VisualTokens
    evidence: Tensor
    attn_maps: np.ndarray
    relevance: Tensor
    fused: Tensor
    concept_logits: list[Tensor]
    concept_relevance: Tensor
    head_maps: np.ndarray | None = None


class DualCrossAttention(Module):
    """Parameters of both attention branches and the per-concept value heads."""

    def __init__(
        self,
        dictionary: ConceptDictionary,
        d_v: int,
        heads: int,
        tau: float,
        rng: np.random.Generator,
    ) -> None:
        if tau <= 0.0:
            raise ConfigError(f"tau must be positive, got {tau}")
        self.tau = tau
        self.mha = MultiHeadAttention(d_v, heads, rng)
        self.i2t_key_proj = Parameter(xavier_uniform(rng, d_v, d_v))
        self.value_heads = [Linear(d_v, count, rng) for count in dictionary.value_counts]
        self._dictionary = dictionary

    def __call__(
        self, prototypes: Tensor, tokens: VisualTokens, debug_heads: bool = False
    ) -> DCAOutput:
        evidence, attn_maps, head_maps = t2i_attention(prototypes, tokens, self.mha)
        relevance = i2t_relevance(tokens.cls, prototypes, self.i2t_key_proj, self.tau)
        fused = fuse(evidence, relevance)
        logits, pooled = concept_logits(fused, relevance, self._dictionary, self.value_heads)
        return DCAOutput(
            tokens=tokens,
            evidence=evidence,
            attn_maps=attn_maps,
            relevance=relevance,
            fused=fused,
            concept_logits=logits,
            concept_relevance=pooled,
            head_maps=head_maps if debug_heads else None,
        )
