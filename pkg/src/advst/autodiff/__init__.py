"""Minimal reverse-mode automatic differentiation over numpy arrays."""

from .gradcheck import analytic_gradient, finite_difference_check
from .ops import *  # noqa: F401,F403
from .ops import __all__ as _ops_all
from .primitives import PRIMITIVES, primitive_forward, register
from .tensor import (
    Graph,
    Tensor,
    active_graph,
    as_tensor,
    backward,
    default_dtype,
    get_default_dtype,
    no_graph,
    set_default_dtype,
)

__all__ = list(_ops_all) + [
    "Graph", "Tensor", "PRIMITIVES", "active_graph", "analytic_gradient", "backward",
    "default_dtype", "finite_difference_check", "get_default_dtype", "no_graph",
    "primitive_forward", "register", "set_default_dtype",
]
