"""Function-level derivative products over recorded computations.

A *recorded function* is any Python callable written with
:mod:`rbp.autodiff.ops` (or the operator overloads on :class:`Var`). Every
entry point here builds a fresh tape at the requested point.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tape import AutodiffError, ShapeError, Tape, Var


@dataclass
class Recording:
    tape: Tape
    inputs: tuple[Var, ...]
    output: Var

    @property
    def value(self) -> np.ndarray:
        return self.output.value


def _as_tuple(point) -> tuple[tuple[np.ndarray, ...], bool]:
    if isinstance(point, (tuple, list)):
        return tuple(np.asarray(p, dtype=np.float64) for p in point), True
    return (np.asarray(point, dtype=np.float64),), False


def record(f: Callable, *inputs, check_finite: bool = True) -> Recording:
    """Run ``f`` on fresh leaves holding ``inputs`` and keep the tape."""
    tape = Tape(check_finite=check_finite)
    leaves = tuple(tape.leaf(x) for x in inputs)
    out = f(*leaves)
    if not isinstance(out, Var):
        # output does not depend on any input: record it as a constant leaf
        out = tape.leaf(out)
    return Recording(tape, leaves, out)


def evaluate(f: Callable, *inputs) -> np.ndarray:
    """Primal value of ``f`` at ``inputs``.

    Raises :class:`~rbp.autodiff.tape.NonFiniteError` naming the tape node of
    the first non-finite intermediate.
    """
    return record(f, *inputs).value


def vjp(f: Callable, point, cotangent):
    """Vector-Jacobian product ``J(point)^T cotangent``.

    ``point`` is one array or a tuple of arrays (the positional inputs of
    ``f``); the result has the same structure.
    """
    args, multi = _as_tuple(point)
    rec = record(f, *args)
    cot = np.asarray(cotangent, dtype=np.float64)
    if cot.shape != rec.output.shape:
        raise ShapeError(f"cotangent shape {cot.shape} does not match output shape {rec.output.shape}")
    grads = rec.tape.backward(rec.output, cot, rec.inputs)
    return tuple(grads) if multi else grads[0]


def jvp(f: Callable, point, tangent):
    """Jacobian-vector product ``J(point) tangent`` by forward tangent propagation."""
    args, multi = _as_tuple(point)
    tans, _ = _as_tuple(tangent) if multi else ((np.asarray(tangent, dtype=np.float64),), False)
    if len(tans) != len(args):
        raise ShapeError("one tangent is required per input")
    for a, t in zip(args, tans):
        if a.shape != t.shape:
            raise ShapeError(f"tangent shape {t.shape} does not match input shape {a.shape}")
    rec = record(f, *args)
    return rec.tape.jvp(rec.output, dict(zip(rec.inputs, tans)))


class JacobianTooLarge(AutodiffError):
    pass


def dense_jacobian(f: Callable, point, cap: int = 10**6) -> np.ndarray:
    """Assemble the full ``n_out x n_in`` Jacobian of a single-input ``f``.

    Row ``i`` is the VJP with the ``i``-th basis cotangent. Intended for tests
    and desk-scale penalties; refuses when ``n_out * n_in`` exceeds ``cap``.
    """
    x = np.asarray(point, dtype=np.float64)
    rec = record(f, x)
    n_in, n_out = x.size, rec.output.size
    if n_in * n_out > cap:
        raise JacobianTooLarge(f"dense Jacobian of size {n_out}x{n_in} exceeds cap {cap}")
    jac = np.empty((n_out, n_in))
    basis = np.zeros(n_out)
    for i in range(n_out):
        basis[i] = 1.0
        (row,) = rec.tape.backward(rec.output, basis.reshape(rec.output.shape), rec.inputs)
        jac[i] = row.ravel()
        basis[i] = 0.0
    return jac


def grad(f: Callable, point):
    """Gradient of a scalar-valued ``f``."""
    args, multi = _as_tuple(point)
    rec = record(f, *args)
    if rec.output.size != 1:
        raise ShapeError("grad requires a scalar-valued function")
    grads = rec.tape.backward(rec.output, np.ones(rec.output.shape), rec.inputs)
    return tuple(grads) if multi else grads[0]


def numerical_jacobian(f: Callable[[np.ndarray], np.ndarray], point, eps: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian of a plain-array function (test oracle)."""
    x = np.asarray(point, dtype=np.float64)
    f0 = np.asarray(f(x))
    jac = np.empty((f0.size, x.size))
    for j in range(x.size):
        e = np.zeros(x.size)
        e[j] = eps
        jac[:, j] = (np.asarray(f(x + e.reshape(x.shape))) - np.asarray(f(x - e.reshape(x.shape)))).ravel() / (2 * eps)
    return jac


def bundle_vars(tape: Tape, bundle: dict) -> dict:
    """Leaves for every tensor in a named parameter bundle (sorted by name)."""
    return {k: tape.leaf(bundle[k]) for k in sorted(bundle)}


def values_of(seq: Sequence) -> list[np.ndarray]:
    return [v.value if isinstance(v, Var) else np.asarray(v) for v in seq]
