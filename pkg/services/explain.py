"""Per-sample explanation reports.

A report decomposes one prediction into three panels:

- A: value probabilities of every concept next to the ground-truth labels
- B: concept contributions ``alpha_k * p_k`` (pooled relevance times the
  probability of the predicted value), strongest first
- C: the value nodes of the top concepts with their strongest outgoing edges
  in the learned adjacency

Each sample is run on its own (batch of one) under ``no_grad``, so a report
depends only on the checkpoint and the sample.
"""

from __future__ import annotations

import numpy as np
import structlog
from pydantic import BaseModel, Field

from engine.tensor import no_grad
from models.dcgnet import DCGNetModel
from synthdata.records import Dataset

logger = structlog.get_logger(__name__)


class ConceptValues(BaseModel):
    """Panel A row."""

    concept: int
    name: str
    values: list[str]
    probabilities: list[float]
    predicted: int
    truth: int | None = None


class Contribution(BaseModel):
    """Panel B row."""

    concept: int
    name: str
    relevance: float = Field(..., description="Pooled image-to-text relevance alpha_k")
    predicted_value: str
    probability: float = Field(..., description="Probability of the predicted value")
    contribution: float = Field(..., description="relevance * probability")


class Edge(BaseModel):
    target: int
    label: str
    weight: float


class NodeEdges(BaseModel):
    node: int
    label: str
    edges: list[Edge]


class ConceptGraphPanel(BaseModel):
    """Panel C entry."""

    concept: int
    name: str
    nodes: list[NodeEdges]


class NodeAttention(BaseModel):
    node: int
    label: str
    patches: list[int] = Field(..., description="Patch indices, strongest first")
    weights: list[float]


class ExplanationReport(BaseModel):
    """Everything one prediction can be explained by."""

    sample: str = Field(..., examples=["s000017"])
    split: str
    predicted: int
    probabilities: list[float]
    truth: int | None = None
    panel_a: list[ConceptValues]
    panel_b: list[Contribution]
    panel_c: list[ConceptGraphPanel]
    attention: list[NodeAttention]
    prototype_norms: list[float]


def strongest_edges(row: np.ndarray, limit: int) -> list[int]:
    """Indices of the ``limit`` largest positive entries; lower index wins ties."""
    order = np.argsort(-row, kind="stable")
    return [int(j) for j in order[:limit] if row[j] > 0.0]


def explain_sample(
    model: DCGNetModel,
    patches: np.ndarray,
    sample: str,
    split: str = "",
    concepts: np.ndarray | None = None,
    label: int | None = None,
    top_n: int = 5,
    edges_per_node: int = 3,
    patches_per_node: int = 3,
    adjacency: np.ndarray | None = None,
) -> ExplanationReport:
    """Explain the prediction for one sample's patch grid (P, d_in)."""
    dictionary = model.dictionary
    with no_grad():
        out = model(patches[None, ...])
        if adjacency is None and model.graph is not None:
            adjacency = model.graph.adjacency().stochastic.data
    logits = out.logits.data[0]
    shifted = np.exp(logits - logits.max())
    class_probs = shifted / shifted.sum()
    relevance = out.dca.concept_relevance.data[0]
    attn_maps = out.dca.attn_maps[0]

    panel_a = []
    panel_b = []
    for k, concept in enumerate(dictionary.concepts):
        probs = out.value_probs[k].data[0]
        predicted = int(np.argmax(probs))
        panel_a.append(
            ConceptValues(
                concept=k,
                name=concept.name,
                values=list(concept.values),
                probabilities=[float(p) for p in probs],
                predicted=predicted,
                truth=None if concepts is None else int(concepts[k]),
            )
        )
        panel_b.append(
            Contribution(
                concept=k,
                name=concept.name,
                relevance=float(relevance[k]),
                predicted_value=concept.values[predicted],
                probability=float(probs[predicted]),
                contribution=float(relevance[k] * probs[predicted]),
            )
        )
    panel_b.sort(key=lambda row: (-row.contribution, row.concept))
    panel_b = panel_b[:top_n]

    panel_c = []
    attention = []
    for row in panel_b:
        nodes = []
        for node in dictionary.value_nodes(row.concept):
            edges = []
            if adjacency is not None:
                edges = [
                    Edge(target=j, label=dictionary.node_label(j), weight=float(adjacency[node, j]))
                    for j in strongest_edges(adjacency[node], edges_per_node)
                ]
            nodes.append(NodeEdges(node=node, label=dictionary.node_label(node), edges=edges))
            top = np.argsort(-attn_maps[node], kind="stable")[:patches_per_node]
            attention.append(
                NodeAttention(
                    node=node,
                    label=dictionary.node_label(node),
                    patches=[int(p) for p in top],
                    weights=[float(attn_maps[node, p]) for p in top],
                )
            )
        panel_c.append(ConceptGraphPanel(concept=row.concept, name=row.name, nodes=nodes))

    return ExplanationReport(
        sample=sample,
        split=split,
        predicted=int(np.argmax(logits)),
        probabilities=[float(p) for p in class_probs],
        truth=label,
        panel_a=panel_a,
        panel_b=panel_b,
        panel_c=panel_c,
        attention=attention,
        prototype_norms=[float(n) for n in model.bank.norms()],
    )


def explain_samples(
    model: DCGNetModel,
    dataset: Dataset,
    samples: list[str],
    top_n: int = 5,
    edges_per_node: int = 3,
    patches_per_node: int = 3,
) -> list[ExplanationReport]:
    """Reports for the given sample ids, in the order requested.

    Raises:
        DatasetError: If a sample id is not in the dataset
    """
    adjacency = None
    if model.graph is not None:
        with no_grad():
            adjacency = model.graph.adjacency().stochastic.data
    reports = []
    for sample in samples:
        split_name, row = dataset.find(sample)
        split = dataset.splits[split_name]
        reports.append(
            explain_sample(
                model,
                split.patches[row],
                sample,
                split=split_name,
                concepts=split.concepts[row],
                label=int(split.labels[row]),
                top_n=top_n,
                edges_per_node=edges_per_node,
                patches_per_node=patches_per_node,
                adjacency=adjacency,
            )
        )
    logger.info("Explanations generated", samples=len(reports), top_n=top_n)
    return reports


def render_records(reports: list[ExplanationReport]) -> str:
    """One compact JSON object per line."""
    return "".join(report.model_dump_json() + "\n" for report in reports)


def render_pretty(report: ExplanationReport) -> str:
    lines = [
        f"sample {report.sample} ({report.split})  predicted class {report.predicted}"
        + ("" if report.truth is None else f"  true class {report.truth}"),
        "  class probabilities: " + " ".join(f"{p:.3f}" for p in report.probabilities),
        "  [A] concept values",
    ]
    for row in report.panel_a:
        probs = ", ".join(
            f"{value}={p:.3f}" for value, p in zip(row.values, row.probabilities, strict=True)
        )
        truth = "" if row.truth is None else f"  (true: {row.values[row.truth]})"
        lines.append(f"      {row.name}: {probs}{truth}")
    lines.append("  [B] contributions")
    for row in report.panel_b:
        lines.append(
            f"      {row.name}={row.predicted_value}: {row.contribution:.4f}"
            f" = {row.relevance:.4f} x {row.probability:.4f}"
        )
    lines.append("  [C] concept graph")
    for entry in report.panel_c:
        for node in entry.nodes:
            edges = ", ".join(f"{edge.label} ({edge.weight:.3f})" for edge in node.edges) or "-"
            lines.append(f"      {node.label} -> {edges}")
    lines.append("  attention")
    for item in report.attention:
        lines.append(f"      {item.label}: patches {item.patches}")
    return "\n".join(lines) + "\n"
