from .tensor.core import ContractError, DimensionError


class ConfigError(ValueError):
    """Invalid configuration or hyperparameter combination."""


class StateError(RuntimeError):
    """Operation called on an object in the wrong state (e.g. empty bank)."""


class UnsupportedOperation(RuntimeError):
    """Feature is disabled or not available in this configuration."""


class IngestionError(ValueError):
    """Dataset directory does not follow the expected layout."""


__all__ = [
    "ConfigError",
    "ContractError",
    "DimensionError",
    "IngestionError",
    "StateError",
    "UnsupportedOperation",
]
