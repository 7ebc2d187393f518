"""Exact input derivatives (forward mode) and parameter gradients (reverse mode)."""
from .checks import fd_gradient, fd_input_derivatives, relative_error
from .dual import ELEMENTARY, Dual2, dual2_chain, input_derivatives
from .tape import GradReport, Var, loss_gradient

__all__ = [
    "Dual2",
    "ELEMENTARY",
    "GradReport",
    "Var",
    "dual2_chain",
    "fd_gradient",
    "fd_input_derivatives",
    "input_derivatives",
    "loss_gradient",
    "relative_error",
]
