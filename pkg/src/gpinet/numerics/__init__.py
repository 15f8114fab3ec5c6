"""Tensor math, reverse-mode differentiation, MLPs and Adam."""

from gpinet.numerics.gradcheck import grad_check, numeric_grad
from gpinet.numerics.nn import Mlp, mlp_forward, mlp_param_count
from gpinet.numerics.optim import Adam, AdamState, adam_step
from gpinet.numerics.tensor import (
    Tape,
    Tensor,
    backward,
    cross_entropy,
    default_dtype,
    get_default_dtype,
    make_op,
    set_default_dtype,
    softmax,
)

__all__ = [
    "Adam", "AdamState", "Mlp", "Tape", "Tensor", "adam_step", "backward",
    "cross_entropy", "default_dtype", "get_default_dtype", "grad_check",
    "make_op", "mlp_forward", "mlp_param_count", "numeric_grad",
    "set_default_dtype", "softmax",
]
