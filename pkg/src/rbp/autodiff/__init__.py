"""Tape-based reverse- and forward-mode differentiation on float64 arrays."""

from . import ops
from .functional import (
    JacobianTooLarge,
    Recording,
    bundle_vars,
    dense_jacobian,
    evaluate,
    grad,
    jvp,
    numerical_jacobian,
    record,
    vjp,
)
from .tape import AutodiffError, NonFiniteError, Primitive, ShapeError, Tape, TapeMismatchError, Var

__all__ = [
    "ops",
    "Tape",
    "Var",
    "Primitive",
    "Recording",
    "record",
    "evaluate",
    "vjp",
    "jvp",
    "grad",
    "dense_jacobian",
    "numerical_jacobian",
    "bundle_vars",
    "AutodiffError",
    "NonFiniteError",
    "ShapeError",
    "TapeMismatchError",
    "JacobianTooLarge",
]
