"""Concept schema, prompt generation and concept-value prototypes.

A dictionary of K concepts with M_k values each defines M = sum(M_k)
concept-value nodes. Node ids are contiguous, ordered by concept index and
then by value index.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from engine.tensor import Tensor, matmul
from models.encoders import TextEncoder
from services.errors import DimensionError, MissingInputError, NumericError, SchemaError

PLACEHOLDER = "{}"

DEFAULT_TEMPLATES = [
    "a lesion showing {}",
    "a clinical image with {}",
    "a sample that is {}",
    "an observation of {}",
]


class ConceptSpec(BaseModel):
    """One concept and its mutually exclusive values."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    name: str = Field(..., min_length=1, description="Concept name", examples=["cell size"])
    values: list[str] = Field(
        ..., min_length=2, description="Ordered value names", examples=[["small", "large"]]
    )
    synonyms: dict[str, list[str]] = Field(
        default_factory=dict, description="Optional synonyms keyed by value name"
    )

    @field_validator("values")
    @classmethod
    def validate_values(cls, v: list[str]) -> list[str]:
        """Value names must be non-empty and unique within the concept."""
        if any(not value for value in v):
            raise SchemaError("value names must be non-empty")
        if len(set(v)) != len(v):
            raise SchemaError("value names must be unique within a concept")
        return v

    @model_validator(mode="after")
    def validate_synonyms(self) -> ConceptSpec:
        unknown = sorted(set(self.synonyms) - set(self.values))
        if unknown:
            raise SchemaError(f"synonyms given for unknown values {unknown}")
        return self


class ConceptDictionary(BaseModel):
    """Ordered concepts, prompt templates and the node indexing."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    concepts: list[ConceptSpec] = Field(..., min_length=1)
    templates: list[str] = Field(default_factory=lambda: list(DEFAULT_TEMPLATES))

    @field_validator("concepts")
    @classmethod
    def validate_concepts(cls, v: list[ConceptSpec]) -> list[ConceptSpec]:
        """Concept names must be unique."""
        names = [concept.name for concept in v]
        if len(set(names)) != len(names):
            raise SchemaError("concept names must be unique")
        return v

    @field_validator("templates")
    @classmethod
    def validate_templates(cls, v: list[str]) -> list[str]:
        """Each template carries exactly one placeholder."""
        for template in v:
            if template.count(PLACEHOLDER) != 1:
                raise SchemaError(f"template {template!r} must contain exactly one '{{}}'")
        return v

    @property
    def num_concepts(self) -> int:
        return len(self.concepts)

    @property
    def value_counts(self) -> list[int]:
        return [len(concept.values) for concept in self.concepts]

    @property
    def offsets(self) -> list[int]:
        """First node id of every concept."""
        return [int(x) for x in np.concatenate([[0], np.cumsum(self.value_counts)[:-1]])]

    @property
    def num_nodes(self) -> int:
        return sum(self.value_counts)

    def node_id(self, k: int, m: int) -> int:
        if not 0 <= k < self.num_concepts or not 0 <= m < self.value_counts[k]:
            raise SchemaError(f"no concept-value node ({k}, {m})")
        return self.offsets[k] + m

    def node_of(self, node: int) -> tuple[int, int]:
        """Inverse of ``node_id``."""
        if not 0 <= node < self.num_nodes:
            raise SchemaError(f"node id {node} outside [0, {self.num_nodes})")
        k = int(np.searchsorted(self.offsets, node, side="right")) - 1
        return k, node - self.offsets[k]

    def value_nodes(self, k: int) -> list[int]:
        return list(range(self.offsets[k], self.offsets[k] + self.value_counts[k]))

    def concept_of_nodes(self) -> np.ndarray:
        """Concept index of every node, in node-id order."""
        return np.repeat(np.arange(self.num_concepts), self.value_counts)

    def node_label(self, node: int) -> str:
        k, m = self.node_of(node)
        return f"{self.concepts[k].name}={self.concepts[k].values[m]}"

    def schema_hash(self) -> str:
        """SHA-256 of the canonical JSON form; ties checkpoints to a schema."""
        canonical = json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def load_schema(path: str | Path) -> ConceptDictionary:
    """Read a JSON schema file.

    Raises:
        MissingInputError: If the file does not exist
        SchemaError: If the file is not valid JSON or violates the schema rules
    """
    path = Path(path)
    if not path.is_file():
        raise MissingInputError(path)
    try:
        return ConceptDictionary.model_validate_json(path.read_text(encoding="utf-8"))
    except ValidationError as err:
        raise SchemaError(f"{path}: {err}") from err


def build_prompts(
    dictionary: ConceptDictionary, k: int, m: int, ensemble: bool = True
) -> list[str]:
    """Prompt set of node (k, m) in a stable, duplicate-free order.

    Order: the bare value name, the bare synonyms, then every template
    instantiated with the value name and with each synonym. With
    ``ensemble=False`` only the bare value name is returned.
    """
    dictionary.node_id(k, m)
    concept = dictionary.concepts[k]
    value = concept.values[m]
    if not ensemble:
        return [value]
    names = [value, *concept.synonyms.get(value, [])]
    prompts = list(names)
    for template in dictionary.templates:
        if template.count(PLACEHOLDER) != 1:
            raise SchemaError(f"template {template!r} must contain exactly one '{{}}'")
        prompts.extend(template.replace(PLACEHOLDER, name) for name in names)
    return list(dict.fromkeys(prompts))


def build_prototypes(
    dictionary: ConceptDictionary, encoder: TextEncoder, ensemble: bool = True
) -> np.ndarray:
    """Average the l2-normalized prompt embeddings of every node (M x d_t).

    The mean is not re-normalized, so rows have norm at most 1.

    Raises:
        NumericError: If the encoder returns a zero vector
    """
    rows = []
    for k, concept in enumerate(dictionary.concepts):
        for m in range(len(concept.values)):
            prompts = build_prompts(dictionary, k, m, ensemble)
            embeddings = np.stack(
                [np.asarray(encoder.encode(p), dtype=np.float64) for p in prompts]
            )
            norms = np.linalg.norm(embeddings, axis=1, keepdims=True)
            if np.any(norms == 0.0):
                label = dictionary.node_label(dictionary.node_id(k, m))
                raise NumericError(f"zero-norm embedding for node {label}")
            rows.append((embeddings / norms).mean(axis=0))
    return np.stack(rows)


def project(raw: np.ndarray, w_p: Tensor) -> Tensor:
    """Projected prototypes ``raw @ W_p``; the raw bank stays constant."""
    if raw.ndim != 2 or w_p.ndim != 2 or raw.shape[1] != w_p.shape[0]:
        raise DimensionError(
            f"project: incompatible shapes {list(raw.shape)} and {list(w_p.shape)}"
        )
    return matmul(Tensor(raw), w_p)


class PrototypeBank:
    """Fixed raw prototypes plus their projection through ``W_p``."""

    def __init__(self, raw: np.ndarray) -> None:
        self.raw = np.asarray(raw, dtype=np.float64)

    @property
    def num_nodes(self) -> int:
        return int(self.raw.shape[0])

    @property
    def d_t(self) -> int:
        return int(self.raw.shape[1])

    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.raw, axis=1)

    def projected(self, w_p: Tensor) -> Tensor:
        return project(self.raw, w_p)
