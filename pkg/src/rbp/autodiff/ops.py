"""Primitive operations.

Every function here accepts plain arrays or :class:`~rbp.autodiff.tape.Var`
handles. With no recorded operand the result is a plain ``ndarray`` computed
directly, so model code written against this module runs at numpy speed when
nothing needs differentiating.
"""

from __future__ import annotations

import numpy as np

from .tape import Primitive, ShapeError, Var

__all__ = [
    "add", "subtract", "multiply", "divide", "negative", "matmul", "outer",
    "transpose", "reshape", "sigmoid", "tanh", "exp", "log", "sqrt", "abs",
    "square", "maximum", "sum", "mean", "max", "concatenate", "getitem", "take",
    "scatter_add", "log_softmax", "value_of", "zeros_like",
]


def value_of(a):
    return a.value if isinstance(a, Var) else a


def zeros_like(a):
    return np.zeros_like(np.asarray(value_of(a), dtype=np.float64))


def _tape_of(args):
    tape = None
    for a in args:
        if isinstance(a, Var):
            if tape is None:
                tape = a.tape
            elif a.tape is not tape:
                from .tape import TapeMismatchError

                raise TapeMismatchError("operands were recorded on different tapes")
    return tape


def _apply(prim: Primitive, *args, **attrs):
    tape = _tape_of(args)
    vals = tuple(value_of(a) for a in args)
    try:
        out = prim.impl(*vals, **attrs)
    except ValueError as exc:
        shapes = [np.shape(v) for v in vals]
        raise ShapeError(f"{prim.name}: incompatible operand shapes {shapes}: {exc}") from exc
    out = np.asarray(out, dtype=np.float64)
    if tape is None:
        return out
    return tape.record(prim, args, out, attrs)


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    gshape = np.shape(value_of(g))
    if gshape == tuple(shape):
        return g
    lead = len(gshape) - len(shape)
    axes = tuple(range(lead)) + tuple(
        i + lead for i, d in enumerate(shape) if d == 1 and gshape[i + lead] != 1
    )
    if axes:
        g = sum(g, axis=axes)
    return reshape(g, tuple(shape))


def _shape(a):
    return np.shape(value_of(a))


def _add_t(ta, tb, shape):
    if ta is None:
        return np.broadcast_to(tb, shape).copy()
    if tb is None:
        return np.broadcast_to(ta, shape).copy()
    return ta + tb


# -- elementwise binary -------------------------------------------------------

_ADD = Primitive(
    "add",
    np.add,
    lambda g, out, a, b: (_unbroadcast(g, _shape(a)), _unbroadcast(g, _shape(b))),
    lambda t, out, a, b: _add_t(t[0], t[1], out.shape),
)

_SUB = Primitive(
    "subtract",
    np.subtract,
    lambda g, out, a, b: (_unbroadcast(g, _shape(a)), _unbroadcast(negative(g), _shape(b))),
    lambda t, out, a, b: _add_t(t[0], None if t[1] is None else -t[1], out.shape),
)


def _mul_jvp(t, out, a, b):
    res = np.zeros(out.shape)
    if t[0] is not None:
        res = res + t[0] * b
    if t[1] is not None:
        res = res + a * t[1]
    return res


_MUL = Primitive(
    "multiply",
    np.multiply,
    lambda g, out, a, b: (_unbroadcast(multiply(g, b), _shape(a)), _unbroadcast(multiply(g, a), _shape(b))),
    _mul_jvp,
)


def _div_jvp(t, out, a, b):
    res = np.zeros(out.shape)
    if t[0] is not None:
        res = res + t[0] / b
    if t[1] is not None:
        res = res - t[1] * a / (b * b)
    return res


_DIV = Primitive(
    "divide",
    np.divide,
    lambda g, out, a, b: (
        _unbroadcast(divide(g, b), _shape(a)),
        _unbroadcast(negative(multiply(g, divide(out, b))), _shape(b)),
    ),
    _div_jvp,
)

_NEG = Primitive("negative", np.negative, lambda g, out, a: (negative(g),), lambda t, out, a: -t[0])


def add(a, b):
    return _apply(_ADD, a, b)


def subtract(a, b):
    return _apply(_SUB, a, b)


def multiply(a, b):
    return _apply(_MUL, a, b)


def divide(a, b):
    return _apply(_DIV, a, b)


def negative(a):
    return _apply(_NEG, a)


# -- linear algebra -----------------------------------------------------------


def _matmul_vjp(g, out, a, b):
    na, nb = len(_shape(a)), len(_shape(b))
    if na == 2 and nb == 2:
        return matmul(g, transpose(b)), matmul(transpose(a), g)
    if na == 2 and nb == 1:
        return outer(g, b), matmul(transpose(a), g)
    if na == 1 and nb == 2:
        return matmul(b, g), outer(a, g)
    return multiply(g, b), multiply(g, a)


def _matmul_jvp(t, out, a, b):
    res = np.zeros(out.shape)
    if t[0] is not None:
        res = res + t[0] @ b
    if t[1] is not None:
        res = res + a @ t[1]
    return res


def _matmul_impl(a, b):
    if np.ndim(a) not in (1, 2) or np.ndim(b) not in (1, 2):
        raise ValueError("matmul supports 1-D and 2-D operands only")
    return np.matmul(a, b)


_MATMUL = Primitive("matmul", _matmul_impl, _matmul_vjp, _matmul_jvp)


def _outer_jvp(t, out, a, b):
    res = np.zeros(out.shape)
    if t[0] is not None:
        res = res + np.outer(t[0], b)
    if t[1] is not None:
        res = res + np.outer(a, t[1])
    return res


_OUTER = Primitive(
    "outer",
    lambda a, b: np.outer(a, b),
    lambda g, out, a, b: (matmul(g, b), matmul(transpose(g), a)),
    _outer_jvp,
)

_TRANSPOSE = Primitive(
    "transpose",
    lambda a: np.transpose(a),
    lambda g, out, a: (transpose(g),),
    lambda t, out, a: np.transpose(t[0]),
)


def _reshape_impl(a, shape):
    return np.reshape(a, shape)


_RESHAPE = Primitive(
    "reshape",
    _reshape_impl,
    lambda g, out, a, shape: (reshape(g, _shape(a)),),
    lambda t, out, a, shape: np.reshape(t[0], shape),
)


def matmul(a, b):
    return _apply(_MATMUL, a, b)


def outer(a, b):
    return _apply(_OUTER, a, b)


def transpose(a):
    return _apply(_TRANSPOSE, a)


def reshape(a, shape):
    shape = tuple(int(s) for s in shape)
    if tuple(_shape(a)) == shape:
        return a
    return _apply(_RESHAPE, a, shape=shape)


# -- elementwise unary --------------------------------------------------------


def _sigmoid_impl(a):
    out = np.empty_like(a, dtype=np.float64)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    ea = np.exp(a[~pos])
    out[~pos] = ea / (1.0 + ea)
    return out


_SIGMOID = Primitive(
    "sigmoid",
    lambda a: _sigmoid_impl(np.asarray(a, dtype=np.float64)),
    lambda g, out, a: (multiply(g, multiply(out, subtract(1.0, out))),),
    lambda t, out, a: t[0] * out * (1.0 - out),
)

_TANH = Primitive(
    "tanh",
    np.tanh,
    lambda g, out, a: (multiply(g, subtract(1.0, square(out))),),
    lambda t, out, a: t[0] * (1.0 - out * out),
)

_EXP = Primitive("exp", np.exp, lambda g, out, a: (multiply(g, out),), lambda t, out, a: t[0] * out)

_LOG = Primitive("log", np.log, lambda g, out, a: (divide(g, a),), lambda t, out, a: t[0] / a)

_SQRT = Primitive(
    "sqrt",
    np.sqrt,
    lambda g, out, a: (divide(g, multiply(2.0, out)),),
    lambda t, out, a: t[0] / (2.0 * out),
)

# subgradient of |x| at 0 is taken as 0
_ABS = Primitive(
    "abs",
    np.abs,
    lambda g, out, a: (multiply(g, np.sign(value_of(a))),),
    lambda t, out, a: t[0] * np.sign(a),
)

_SQUARE = Primitive(
    "square",
    np.square,
    lambda g, out, a: (multiply(g, multiply(2.0, a)),),
    lambda t, out, a: 2.0 * a * t[0],
)


def _maximum_mask(a, b):
    # ties send the gradient to the first operand
    return (np.asarray(value_of(a)) >= np.asarray(value_of(b))).astype(np.float64)


def _maximum_vjp(g, out, a, b):
    m = _maximum_mask(a, b)
    return _unbroadcast(multiply(g, m), _shape(a)), _unbroadcast(multiply(g, 1.0 - m), _shape(b))


def _maximum_jvp(t, out, a, b):
    m = _maximum_mask(a, b)
    res = np.zeros(out.shape)
    if t[0] is not None:
        res = res + m * t[0]
    if t[1] is not None:
        res = res + (1.0 - m) * t[1]
    return res


_MAXIMUM = Primitive("maximum", np.maximum, _maximum_vjp, _maximum_jvp)


def sigmoid(a):
    return _apply(_SIGMOID, a)


def tanh(a):
    return _apply(_TANH, a)


def exp(a):
    return _apply(_EXP, a)


def log(a):
    return _apply(_LOG, a)


def sqrt(a):
    return _apply(_SQRT, a)


def abs(a):  # noqa: A001 - mirrors numpy naming
    return _apply(_ABS, a)


def square(a):
    return _apply(_SQUARE, a)


def maximum(a, b):
    return _apply(_MAXIMUM, a, b)


# -- reductions ---------------------------------------------------------------


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(ax % ndim for ax in axis))


def _expand_back(g, in_shape, axis):
    """Broadcast a reduced cotangent back to ``in_shape``."""
    axes = _norm_axis(axis, len(in_shape))
    kept = tuple(1 if i in axes else d for i, d in enumerate(in_shape))
    g = reshape(g, kept)
    return multiply(g, np.ones(in_shape))


_SUM = Primitive(
    "sum",
    lambda a, axis: np.sum(a, axis=axis),
    lambda g, out, a, axis: (_expand_back(g, _shape(a), axis),),
    lambda t, out, a, axis: np.sum(t[0], axis=axis),
)


def _max_mask(a, axis):
    # one winner per reduction (first occurrence) keeps the subgradient deterministic
    a = np.asarray(value_of(a))
    mask = np.zeros(a.shape)
    if axis is None or len(_norm_axis(axis, a.ndim)) == a.ndim:
        mask.flat[int(np.argmax(a))] = 1.0
        return mask
    ax = _norm_axis(axis, a.ndim)[0]
    idx = np.expand_dims(np.argmax(a, axis=ax), ax)
    np.put_along_axis(mask, idx, 1.0, axis=ax)
    return mask


_MAX = Primitive(
    "max",
    lambda a, axis: np.max(a, axis=axis),
    lambda g, out, a, axis: (multiply(_expand_back(g, _shape(a), axis), _max_mask(a, axis)),),
    lambda t, out, a, axis: np.sum(t[0] * _max_mask(a, axis), axis=axis),
)


def sum(a, axis=None):  # noqa: A001
    if isinstance(axis, list):
        axis = tuple(axis)
    return _apply(_SUM, a, axis=axis)


def mean(a, axis=None):
    shape = _shape(a)
    count = int(np.prod([shape[i] for i in _norm_axis(axis, len(shape))])) if shape else 1
    return multiply(sum(a, axis=axis), 1.0 / count)


def max(a, axis=None):  # noqa: A001
    if isinstance(axis, (tuple, list)) and len(axis) > 1 and len(axis) != len(_shape(a)):
        raise ValueError("max supports a single axis or a full reduction")
    return _apply(_MAX, a, axis=axis)


# -- structural ---------------------------------------------------------------


def _concat_impl(*arrays, axis):
    return np.concatenate(arrays, axis=axis)


def _concat_vjp(g, out, *arrays, axis):
    parts = []
    start = 0
    ndim = len(_shape(g))
    for a in arrays:
        n = _shape(a)[axis]
        idx = [slice(None)] * ndim
        idx[axis] = slice(start, start + n)
        parts.append(getitem(g, tuple(idx)))
        start += n
    return tuple(parts)


def _concat_jvp(t, out, *arrays, axis):
    return np.concatenate([np.zeros(np.shape(a)) if ti is None else ti for ti, a in zip(t, arrays)], axis=axis)


_CONCAT = Primitive("concatenate", _concat_impl, _concat_vjp, _concat_jvp)


def concatenate(arrays, axis=0):
    return _apply(_CONCAT, *arrays, axis=axis)


def _freeze_index(index):
    """Normalize an index expression so it can be stored and replayed."""
    if not isinstance(index, tuple):
        index = (index,)
    out = []
    for ix in index:
        if isinstance(ix, (list, np.ndarray)):
            out.append(np.asarray(ix))
        else:
            out.append(ix)
    return tuple(out)


def _scatter_impl(g, index, shape):
    res = np.zeros(shape)
    np.add.at(res, index, g)
    return res


_GETITEM = Primitive(
    "getitem",
    lambda a, index: np.array(a[index], dtype=np.float64),
    lambda g, out, a, index: (scatter_add(g, index, _shape(a)),),
    lambda t, out, a, index: np.array(t[0][index], dtype=np.float64),
)

_SCATTER = Primitive(
    "scatter_add",
    _scatter_impl,
    lambda g, out, src, index, shape: (getitem(g, index),),
    lambda t, out, src, index, shape: _scatter_impl(t[0], index, shape),
)


def getitem(a, index):
    return _apply(_GETITEM, a, index=_freeze_index(index))


def take(a, indices, axis=0):
    """Gather entries of ``a`` at ``indices`` along ``axis``."""
    index = [slice(None)] * len(_shape(a))
    index[axis] = np.asarray(indices, dtype=np.intp)
    return getitem(a, tuple(index))


def scatter_add(src, index, shape):
    """Zeros of ``shape`` with ``src`` added at ``index`` (repeated indices accumulate)."""
    return _apply(_SCATTER, src, index=_freeze_index(index), shape=tuple(shape))


# -- classification helper ----------------------------------------------------


def _log_softmax_impl(a, axis):
    m = np.max(a, axis=axis, keepdims=True)
    z = a - m
    return z - np.log(np.sum(np.exp(z), axis=axis, keepdims=True))


def _log_softmax_vjp(g, out, a, axis):
    p = exp(out)
    gs = sum(g, axis=axis)
    return (subtract(g, multiply(p, _expand_back(gs, _shape(a), axis))),)


def _log_softmax_jvp(t, out, a, axis):
    p = np.exp(out)
    return t[0] - np.sum(p * t[0], axis=axis, keepdims=True)


_LOG_SOFTMAX = Primitive("log_softmax", _log_softmax_impl, _log_softmax_vjp, _log_softmax_jvp)


def log_softmax(a, axis=-1):
    axis = axis % len(_shape(a))
    return _apply(_LOG_SOFTMAX, a, axis=axis)
