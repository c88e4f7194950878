"""Base and numeric errors raised by the tensor engine.

``services.errors`` builds the rest of the hierarchy on top of these and
re-exports them, so callers outside the engine import from there.
"""


class DCGNetError(Exception):
    """Base class for all domain errors."""

    code = "error"
    exit_code = 1


class DimensionError(DCGNetError, ValueError):
    """Tensor shapes do not agree."""

    code = "dimension_error"


class NumericError(DCGNetError, ValueError):
    """A numeric precondition failed (non-finite input, zero norm, guard)."""

    code = "numeric_error"


class ContractError(DCGNetError, ValueError):
    """A call violated an operation contract."""

    code = "contract_error"


class ConfigError(DCGNetError, ValueError):
    """A configuration value or file is invalid."""

    code = "config_error"
    exit_code = 2
