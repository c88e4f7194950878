"""The full concept-graph diagnosis model.

Pipeline for a batch of raw patch grids (B, P, d_in)::

    patches -> PatchEncoder -> [CLS; patches]
    prototypes @ W_p -> dual cross-attention -> H0 (B, M, d_v), u_k, alpha_k
    H0 -> concept graph -> HL
    HL -> mean-pool per concept -> z (B, K * d_v) -> diagnosis logits o

Diagnosis logits depend on the input only through HL.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import structlog

from engine import tensor as T
from engine.module import Linear, Module, Parameter, xavier_uniform
from engine.tensor import Tensor
from models.attention import DCAOutput, DualCrossAttention, PatchEncoder, predicted_value_probs
from models.encoders import FileTextEncoder, HashTextEncoder, TextEncoder
from models.graph import AdjacencyPipelineOutput, ConceptGraph, build_ppmi
from models.schema import ConceptDictionary, PrototypeBank, build_prototypes
from services.config import ModelConfig
from services.errors import ConfigError, DimensionError, SchemaError

logger = structlog.get_logger(__name__)


@dataclass
class ForwardOutput:
    dca: DCAOutput
    h_final: Tensor
    concept_post: list[Tensor]
    z: Tensor
    logits: Tensor
    value_probs: list[Tensor]
    adjacency: AdjacencyPipelineOutput | None


class DCGNetModel(Module):
    """Prototype bank, patch encoder, attention, graph and diagnosis head.

    Attributes:
        bank: Fixed raw prototypes (M x d_t)
        prior: PPMI prior used by the graph (M x M)
        w_p: Prototype projection d_t -> d_v
        graph: ``None`` when the graph stage is switched off
        head: Diagnosis head (K * d_v) -> n_classes
    """

    def __init__(
        self,
        dictionary: ConceptDictionary,
        bank: PrototypeBank,
        prior: np.ndarray,
        config: ModelConfig,
        d_in: int,
        n_classes: int,
        seed: int,
    ) -> None:
        if bank.num_nodes != dictionary.num_nodes:
            raise SchemaError(
                f"prototype bank has {bank.num_nodes} rows, "
                f"dictionary has {dictionary.num_nodes} nodes"
            )
        if bank.d_t != config.d_t:
            raise ConfigError(f"prototype width {bank.d_t} does not match d_t={config.d_t}")
        if n_classes < 2:
            raise ConfigError(f"need at least 2 diagnosis classes, got {n_classes}")
        rng = np.random.default_rng(seed)
        self.dictionary = dictionary
        self.config = config
        self.d_in = d_in
        self.n_classes = n_classes
        self.bank = bank
        self.prior = np.asarray(prior, dtype=np.float64)
        self.w_p = Parameter(xavier_uniform(rng, config.d_t, config.d_v))
        self.patch_encoder = PatchEncoder(d_in, config.d_v, rng)
        self.dca = DualCrossAttention(dictionary, config.d_v, config.heads, config.tau, rng)
        self.graph = (
            ConceptGraph(dictionary, self.prior, config.d_v, config.graph_layers, config.k_top, rng)
            if config.use_graph
            else None
        )
        self.head = Linear(dictionary.num_concepts * config.d_v, n_classes, rng)

    def prototypes(self) -> Tensor:
        return self.bank.projected(self.w_p)

    def forward(self, patches: np.ndarray | Tensor, debug_heads: bool = False) -> ForwardOutput:
        x = patches if isinstance(patches, Tensor) else Tensor(patches)
        if x.ndim != 3 or x.shape[2] != self.d_in:
            raise SchemaError(f"expected patches [B, P, {self.d_in}], got {list(x.shape)}")
        tokens = self.patch_encoder(x)
        dca = self.dca(self.prototypes(), tokens, debug_heads=debug_heads)
        adjacency = None
        h_final = dca.fused
        if self.graph is not None:
            h_final, adjacency = self.graph(dca.fused)
        concept_post, z, logits = self.diagnose(h_final)
        return ForwardOutput(
            dca=dca,
            h_final=h_final,
            concept_post=concept_post,
            z=z,
            logits=logits,
            value_probs=predicted_value_probs(dca.concept_logits),
            adjacency=adjacency,
        )

    __call__ = forward

    def diagnose(self, h_final: Tensor) -> tuple[list[Tensor], Tensor, Tensor]:
        """Pool refined node states per concept, concatenate, apply the head."""
        if h_final.ndim != 3 or h_final.shape[1:] != (self.dictionary.num_nodes, self.config.d_v):
            raise DimensionError(
                f"diagnose: expected [B, {self.dictionary.num_nodes}, {self.config.d_v}], "
                f"got {list(h_final.shape)}"
            )
        pooled = [
            T.reduce_mean(T.gather(h_final, self.dictionary.value_nodes(k), axis=1), axis=1)
            for k in range(self.dictionary.num_concepts)
        ]
        z = T.concat(pooled, axis=1)
        return pooled, z, self.head(z)


def text_encoder_for(config: ModelConfig) -> TextEncoder:
    """File-backed encoder when ``embeddings_path`` is set, else the hash encoder."""
    if config.embeddings_path is None:
        return HashTextEncoder(config.d_t, seed=config.text_seed)
    encoder = FileTextEncoder.from_file(config.embeddings_path)
    if encoder.d_t != config.d_t:
        raise ConfigError(f"embedding file width {encoder.d_t} does not match d_t={config.d_t}")
    return encoder


def build_model(
    dictionary: ConceptDictionary,
    train_concepts: np.ndarray,
    config: ModelConfig,
    d_in: int,
    n_classes: int,
    seed: int,
    encoder: TextEncoder | None = None,
) -> DCGNetModel:
    """Build prototypes and the PPMI prior from training labels, then the model."""
    encoder = encoder if encoder is not None else text_encoder_for(config)
    bank = PrototypeBank(build_prototypes(dictionary, encoder, ensemble=config.prompt_ensemble))
    prior = build_ppmi(train_concepts, dictionary, smoothing=config.ppmi_smoothing)
    model = DCGNetModel(dictionary, bank, prior.matrix, config, d_in, n_classes, seed)
    logger.info(
        "Model built",
        nodes=dictionary.num_nodes,
        concepts=dictionary.num_concepts,
        parameters=sum(p.size for p in model.parameters()),
        use_graph=config.use_graph,
    )
    return model
