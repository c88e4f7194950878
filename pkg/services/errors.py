"""Exception hierarchy shared by every package.

Each error carries a stable ``code`` used in the CLI's one-line error record and
an ``exit_code`` the command surface returns to the shell. The engine-level
errors live in ``engine.errors`` and are re-exported here.
"""

import numpy as np

from engine.errors import ConfigError, ContractError, DCGNetError, DimensionError, NumericError

__all__ = [
    "CheckpointError",
    "ConfigError",
    "ContractError",
    "DCGNetError",
    "DatasetError",
    "DimensionError",
    "DivergenceError",
    "EmbeddingLookupError",
    "GradientCheckFailed",
    "LabelError",
    "LoadError",
    "MissingInputError",
    "NumericError",
    "SchemaError",
    "TrainingAborted",
    "UsageError",
]


class SchemaError(DCGNetError, ValueError):
    """The concept schema is invalid or does not match the data."""

    code = "schema_error"


class UsageError(ConfigError):
    """The command line could not be parsed."""

    code = "usage_error"


class LabelError(DCGNetError, ValueError):
    """A class or concept label is out of range."""

    code = "label_error"


class LoadError(DCGNetError, ValueError):
    """An embedding file could not be parsed."""

    code = "load_error"


class DatasetError(DCGNetError, ValueError):
    """A dataset directory or record is missing, corrupt or empty."""

    code = "dataset_error"


class CheckpointError(DCGNetError, ValueError):
    """A checkpoint is unreadable or belongs to another schema."""

    code = "checkpoint_error"


class EmbeddingLookupError(DCGNetError, KeyError):
    """A prompt has no embedding in a file-backed text encoder."""

    code = "embedding_lookup_error"


class MissingInputError(DCGNetError, FileNotFoundError):
    """An input path given on the command line does not exist."""

    code = "missing_input"
    exit_code = 2

    def __init__(self, path: object) -> None:
        super().__init__(f"input not found: {path}")
        self.path = str(path)


class DivergenceError(DCGNetError, ArithmeticError):
    """A loss component became non-finite."""

    code = "divergence"
    exit_code = 3

    def __init__(self, component: str, value: float) -> None:
        super().__init__(f"loss component '{component}' is not finite ({value})")
        self.component = component
        self.value = value


class GradientCheckFailed(DCGNetError):
    """Reverse-mode gradients disagree with finite differences."""

    code = "gradcheck_failed"


class TrainingAborted(DCGNetError):
    """Training stopped early; carries the last good parameter snapshot."""

    code = "training_aborted"
    exit_code = 3

    def __init__(
        self,
        reason: str,
        last_good: dict[str, np.ndarray],
        records: list[dict],
        last_good_epoch: int = 0,
    ) -> None:
        super().__init__(f"training aborted: {reason} (last good epoch {last_good_epoch})")
        self.reason = reason
        self.last_good = last_good
        self.records = records
        self.last_good_epoch = last_good_epoch
