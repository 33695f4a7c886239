"""Fixed-capacity spatial memory with a learned replacement policy, on a small numpy autodiff engine."""

from . import attention, memory, models, nn, tensor
from .errors import ConfigError, ContractError, DimensionError, IngestionError, StateError, UnsupportedOperation

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "ContractError",
    "DimensionError",
    "IngestionError",
    "StateError",
    "UnsupportedOperation",
    "attention",
    "memory",
    "models",
    "nn",
    "tensor",
]
