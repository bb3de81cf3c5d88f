"""Small reverse-mode autodiff engine: just the layers the separator needs."""

from . import ops
from .ops import (
    activation,
    avg_pool2x,
    concat,
    conv2d,
    instance_norm,
    l1_mean,
    leaky_relu,
    nearest_upsample2x,
    relu,
    sigmoid,
    square_mean,
)
from .optim import AdamState, adam_step
from .tensor import ContractError, Tape, Tensor, active_tape, as_tensor, set_debug

__all__ = [
    "AdamState",
    "ContractError",
    "Tape",
    "Tensor",
    "activation",
    "active_tape",
    "adam_step",
    "as_tensor",
    "avg_pool2x",
    "concat",
    "conv2d",
    "instance_norm",
    "l1_mean",
    "leaky_relu",
    "nearest_upsample2x",
    "ops",
    "relu",
    "set_debug",
    "sigmoid",
    "square_mean",
]
