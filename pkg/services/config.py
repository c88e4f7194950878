"""Configuration for the concept-graph diagnosis toolkit.

Two layers:

- ``Settings`` holds process-level knobs read from the environment (or a
  ``.env`` file) with the ``DCGNET_`` prefix.
- ``RunConfig`` is the JSON run file passed to ``dcgnet train --config``. Every
  model and training hyperparameter is addressable there and unknown keys are
  rejected so a typo never silently falls back to a default.
"""

import json
from pathlib import Path

from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    ValidationError,
    ValidationInfo,
    field_validator,
)
from pydantic_settings import BaseSettings, SettingsConfigDict

from services.errors import ConfigError, MissingInputError


class Settings(BaseSettings):
    """Process settings."""

    # Logging
    log_level: str = "info"
    log_format: str = "json"

    # Evaluation and explanation
    eval_batch_size: int = 256
    explain_edges_per_node: int = 3
    explain_patches_per_node: int = 3

    @field_validator("log_format")
    @classmethod
    def validate_log_format(cls, v: str) -> str:
        """Only the two renderers we configure are accepted."""
        if v not in ("json", "console"):
            raise ValueError("log_format must be 'json' or 'console'")
        return v

    @field_validator("eval_batch_size", "explain_edges_per_node", "explain_patches_per_node")
    @classmethod
    def validate_positive(cls, v: int) -> int:
        """Batch and report sizes must be positive."""
        if v < 1:
            raise ValueError("must be at least 1")
        return v

    model_config = SettingsConfigDict(
        env_prefix="DCGNET_",
        env_file=".env",
        case_sensitive=False,
        extra="ignore",
    )


class ModelConfig(BaseModel):
    """Architecture hyperparameters.

    Attributes:
        d_t: Text embedding width of the prototype bank
        d_v: Visual token width shared by attention and graph layers
        heads: Attention head count; must divide ``d_v``
        tau: Temperature of the image-to-text relevance gate
        graph_layers: Number of message-passing layers
        k_top: Outgoing edges kept per node after sparsification
        use_graph: Disable to bypass the concept graph entirely
        prompt_ensemble: Disable to build prototypes from bare value names
    """

    model_config = ConfigDict(extra="forbid")

    d_t: int = Field(128, ge=8, description="Text embedding width", examples=[128])
    d_v: int = Field(64, ge=1, description="Visual embedding width", examples=[64])
    heads: int = Field(4, ge=1, description="Attention heads", examples=[4])
    tau: float = Field(1.0, gt=0.0, description="Relevance temperature", examples=[1.0])
    graph_layers: int = Field(2, ge=1, description="Message-passing layers", examples=[2])
    k_top: int = Field(8, ge=1, description="Edges kept per node", examples=[8])
    use_graph: bool = Field(True, description="Run the concept graph")
    prompt_ensemble: bool = Field(
        True, description="Average synonyms and templates into each prototype"
    )
    ppmi_smoothing: float = Field(
        1.0, ge=0.0, description="Additive smoothing for co-occurrence counts"
    )
    text_seed: int = Field(0, description="Seed of the hashing text encoder")
    embeddings_path: str | None = Field(
        None, description="Precomputed prompt embeddings; overrides the hash encoder"
    )
    init_seed: int | None = Field(
        None, description="Parameter initialisation seed; defaults to the training seed"
    )

    @field_validator("heads")
    @classmethod
    def validate_heads(cls, v: int, info: ValidationInfo) -> int:
        """Heads must split the visual width evenly."""
        d_v = info.data.get("d_v")
        if d_v is not None and d_v % v != 0:
            raise ValueError(f"heads ({v}) must divide d_v ({d_v})")
        return v


class LossWeights(BaseModel):
    """Per-component weights of the training objective (all 1.0 by default)."""

    model_config = ConfigDict(extra="forbid")

    align: float = Field(1.0, ge=0.0)
    concept: float = Field(1.0, ge=0.0)
    cons: float = Field(1.0, ge=0.0)
    diag: float = Field(1.0, ge=0.0)


class TrainConfig(BaseModel):
    """Optimisation hyperparameters."""

    model_config = ConfigDict(extra="forbid")

    learning_rate: float = Field(3e-3, gt=0.0, examples=[3e-3])
    weight_decay: float = Field(5e-3, ge=0.0, examples=[5e-3])
    epochs: int = Field(30, ge=1, examples=[30])
    batch_size: int = Field(32, ge=1, examples=[32])
    warmup_fraction: float = Field(0.05, ge=0.0, lt=1.0)
    label_smoothing: float = Field(0.05, ge=0.0, lt=0.5)
    seed: int = Field(1, examples=[1])
    class_balancing: bool = True
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = Field(1e-8, gt=0.0)
    weight_clamp: tuple[float, float] = (0.1, 10.0)
    loss_weights: LossWeights = Field(default_factory=LossWeights)

    @field_validator("betas")
    @classmethod
    def validate_betas(cls, v: tuple[float, float]) -> tuple[float, float]:
        """Moment decay rates live in [0, 1)."""
        if not all(0.0 <= beta < 1.0 for beta in v):
            raise ValueError("betas must lie in [0, 1)")
        return v

    @field_validator("weight_clamp")
    @classmethod
    def validate_weight_clamp(cls, v: tuple[float, float]) -> tuple[float, float]:
        """The clamp interval must be positive and ordered."""
        low, high = v
        if not 0.0 < low <= high:
            raise ValueError("weight_clamp must satisfy 0 < low <= high")
        return v


class RunConfig(BaseModel):
    """Complete run file: model plus training settings."""

    model_config = ConfigDict(extra="forbid")

    model: ModelConfig = Field(default_factory=ModelConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)


def load_run_config(path: str | Path) -> RunConfig:
    """Load and validate a JSON run file.

    Raises:
        MissingInputError: If the file does not exist
        ConfigError: If the file is not JSON or fails validation
    """
    path = Path(path)
    if not path.is_file():
        raise MissingInputError(path)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
        return RunConfig.model_validate(payload)
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}: not valid JSON ({err})") from err
    except ValidationError as err:
        raise ConfigError(f"{path}: {err}") from err


# Create settings instance
settings = Settings()
