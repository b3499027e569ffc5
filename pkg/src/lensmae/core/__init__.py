from . import ops
from .gradcheck import grad_check, numerical_gradient
from .module import Module, he_normal, trunc_normal, xavier_uniform
from .tensor import (
    NonFiniteError,
    ShapeError,
    Tensor,
    as_tensor,
    finite_checks_enabled,
    grad_enabled,
    no_grad,
    parameter,
    set_finite_checks,
    zero_grads,
)

__all__ = [
    "Module",
    "NonFiniteError",
    "ShapeError",
    "Tensor",
    "as_tensor",
    "finite_checks_enabled",
    "grad_check",
    "grad_enabled",
    "he_normal",
    "no_grad",
    "numerical_gradient",
    "ops",
    "parameter",
    "set_finite_checks",
    "trunc_normal",
    "xavier_uniform",
    "zero_grads",
]
