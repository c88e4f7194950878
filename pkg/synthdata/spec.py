"""Generator parameters of a synthetic dataset (the ``synth`` spec file)."""

from __future__ import annotations

import json
from pathlib import Path

from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    ValidationError,
    field_validator,
    model_validator,
)

from models.schema import ConceptDictionary, ConceptSpec
from services.errors import ConfigError, MissingInputError

ROW_TOLERANCE = 1e-9


class SyntheticSpec(BaseModel):
    """Generator parameters; the JSON form is the ``synth`` spec file."""

    model_config = ConfigDict(extra="forbid")

    n_classes: int = Field(4, ge=2, description="Diagnosis classes", examples=[4])
    concept_values: list[int] = Field(
        default_factory=lambda: [2, 3, 2, 3, 2],
        min_length=1,
        description="Value count of every concept",
        examples=[[2, 3, 2, 3, 2]],
    )
    class_tables: list[list[list[float]]] | None = Field(
        None, description="Per class, per concept value distribution; generated when omitted"
    )
    purity: float = Field(
        0.98, gt=0.0, le=1.0, description="Probability of a class's preferred value"
    )
    correlation: float = Field(0.6, ge=0.0, le=1.0, description="Latent copy probability")
    patch_count: int = Field(16, ge=1, description="Patches per sample")
    patch_width: int = Field(32, ge=1, description="Raw floats per patch")
    noise: float = Field(0.3, ge=0.0, description="Gaussian noise standard deviation")
    n_samples: int = Field(2800, ge=3, description="Total samples when split_sizes is unset")
    split_sizes: tuple[int, int, int] | None = Field(
        None, description="Explicit train/val/test sizes", examples=[[2000, 400, 400]]
    )
    seed: int = Field(0, description="Master seed")
    dictionary: ConceptDictionary | None = Field(
        None, description="Concept names; generic names are used when omitted"
    )

    @field_validator("concept_values")
    @classmethod
    def validate_concept_values(cls, v: list[int]) -> list[int]:
        """Every concept needs at least two values."""
        if any(count < 2 for count in v):
            raise ConfigError("every concept needs at least 2 values")
        return v

    @field_validator("split_sizes")
    @classmethod
    def validate_split_sizes(cls, v: tuple[int, int, int] | None) -> tuple[int, int, int] | None:
        """Train and validation splits must be non-empty."""
        if v is not None and (v[0] < 1 or v[1] < 1 or v[2] < 0):
            raise ConfigError("split_sizes needs train >= 1, val >= 1, test >= 0")
        return v

    @model_validator(mode="after")
    def validate_tables(self) -> SyntheticSpec:
        if self.class_tables is not None:
            if len(self.class_tables) != self.n_classes:
                raise ConfigError(
                    f"class_tables has {len(self.class_tables)} classes, expected {self.n_classes}"
                )
            for y, table in enumerate(self.class_tables):
                if [len(row) for row in table] != self.concept_values:
                    raise ConfigError(f"class {y}: table shape does not match concept_values")
                for k, row in enumerate(table):
                    if any(p < 0.0 for p in row) or abs(sum(row) - 1.0) > ROW_TOLERANCE:
                        raise ConfigError(
                            f"class {y}, concept {k}: row must be non-negative and sum to 1"
                        )
        if self.dictionary is not None and self.dictionary.value_counts != self.concept_values:
            raise ConfigError("dictionary value counts do not match concept_values")
        return self

    @property
    def num_concepts(self) -> int:
        return len(self.concept_values)

    @property
    def total_samples(self) -> int:
        return sum(self.split_sizes) if self.split_sizes is not None else self.n_samples


def default_dictionary(concept_values: list[int]) -> ConceptDictionary:
    return ConceptDictionary(
        concepts=[
            ConceptSpec(name=f"concept_{k}", values=[f"value_{m}" for m in range(count)])
            for k, count in enumerate(concept_values)
        ]
    )


def resolve_dictionary(spec: SyntheticSpec) -> ConceptDictionary:
    if spec.dictionary is not None:
        return spec.dictionary
    return default_dictionary(spec.concept_values)


def load_synthetic_spec(path: str | Path) -> SyntheticSpec:
    """Read a JSON generator spec file.

    Raises:
        MissingInputError: If the file does not exist
        ConfigError: If the file is not JSON or fails validation
    """
    path = Path(path)
    if not path.is_file():
        raise MissingInputError(path)
    try:
        return SyntheticSpec.model_validate(json.loads(path.read_text(encoding="utf-8")))
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}: not valid JSON ({err})") from err
    except ValidationError as err:
        raise ConfigError(f"{path}: {err}") from err
