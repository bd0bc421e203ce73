"""Minimal dense-tensor numerics with reverse-mode differentiation."""

from . import kernels, ops
from .gradcheck import check_gradients, finite_difference_grads, relative_gradient_error
from .tensor import Tape, Tensor, active_tape, record, set_debug_checks, zero_grads

__all__ = [
    "Tape",
    "Tensor",
    "active_tape",
    "check_gradients",
    "finite_difference_grads",
    "kernels",
    "ops",
    "record",
    "relative_gradient_error",
    "set_debug_checks",
    "zero_grads",
]
