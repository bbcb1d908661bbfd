"""Minimal dense-tensor numerics with reverse-mode automatic differentiation."""
from .tensor import Tensor, backward, no_grad, is_grad_enabled
from .ops import (
    add,
    dropout,
    gelu,
    layer_norm,
    linear,
    matmul,
    mean_axis,
    mul,
    reshape,
    scale,
    softmax,
    sum_all,
    transpose,
)
from .gradcheck import GradCheckReport, grad_check
from . import container

__all__ = [
    "Tensor", "backward", "no_grad", "is_grad_enabled",
    "add", "dropout", "gelu", "layer_norm", "linear", "matmul", "mean_axis", "mul",
    "reshape", "scale", "softmax", "sum_all", "transpose",
    "GradCheckReport", "grad_check", "container",
]
