"""Minimal float64 tensor engine with reverse-mode (and second-order) differentiation."""
from . import functional
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .gradcheck import grad_check, grad_check_module, input_gradient
from .nn import BatchNorm1d, Conv1d, Conv2d, ConvTranspose1d, Dense, Module
from .optim import Adam, AdamState, adam_step
from .tensor import (
    DoubleBackwardError,
    ShapeError,
    Tensor,
    abs_,
    as_tensor,
    backward,
    concat,
    exp,
    grad,
    leaky_relu,
    log,
    matmul,
    max_pool1d,
    mean,
    no_grad,
    relu,
    reshape,
    sigmoid,
    silu,
    softplus,
    sqrt,
    square,
    sum_,
    tanh,
)

__all__ = [
    "Adam", "AdamState", "BatchNorm1d", "CheckpointError", "Conv1d", "Conv2d", "ConvTranspose1d",
    "Dense", "DoubleBackwardError", "Module", "ShapeError", "Tensor", "abs_", "adam_step",
    "as_tensor", "backward", "concat", "exp", "functional", "grad", "grad_check",
    "grad_check_module", "input_gradient", "leaky_relu", "load_checkpoint", "log", "matmul",
    "max_pool1d", "mean", "no_grad", "relu", "reshape", "save_checkpoint", "sigmoid", "silu",
    "softplus", "sqrt", "square", "sum_", "tanh",
]
