from . import ops
from .checkpoint import CheckpointError, load_arrays, save_arrays
from .core import (
    ContractError,
    DimensionError,
    GradientTape,
    Gradients,
    Tensor,
    backward,
    get_dtype,
    no_grad,
    precision,
    set_precision,
)
from .gradcheck import GradCheckReport, grad_check

__all__ = [
    "CheckpointError",
    "ContractError",
    "DimensionError",
    "GradCheckReport",
    "GradientTape",
    "Gradients",
    "Tensor",
    "backward",
    "get_dtype",
    "grad_check",
    "load_arrays",
    "no_grad",
    "ops",
    "precision",
    "save_arrays",
    "set_precision",
]
