"""Recording tape, variable handles and the primitive-operation protocol."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np


class AutodiffError(Exception):
    """Base class for errors raised by the differentiation engine."""


class ShapeError(AutodiffError, ValueError):
    pass


class NonFiniteError(AutodiffError, FloatingPointError):
    """A recorded operation produced inf or nan."""

    def __init__(self, node_index: int, op_name: str):
        super().__init__(f"non-finite value produced by '{op_name}' at tape node {node_index}")
        self.node_index = node_index
        self.op_name = op_name


class TapeMismatchError(AutodiffError):
    pass


@dataclass(frozen=True)
class Primitive:
    """A differentiable elementary operation.

    ``impl(*values, **attrs)`` computes the primal output. ``vjp(g, out, *ins,
    **attrs)`` returns one cotangent per input (``None`` when the input is not
    differentiable); it is written with :mod:`rbp.autodiff.ops` so that it
    works both on plain arrays and on recorded variables, which is what makes
    recorded backward passes possible. ``jvp(tangents, out, *ins, **attrs)``
    maps input tangents (``None`` for inputs without one) to the output tangent
    and always operates on plain arrays.
    """

    name: str
    impl: Callable[..., np.ndarray]
    vjp: Callable[..., tuple]
    jvp: Callable[..., np.ndarray]


@dataclass
class Node:
    prim: Primitive | None  # None for leaves
    args: tuple  # Var for recorded parents, anything else is a constant
    attrs: dict
    value: np.ndarray


class Var:
    """Handle to one node of a :class:`Tape`."""

    __slots__ = ("tape", "index", "value")
    __array_priority__ = 100.0

    def __init__(self, tape: "Tape", index: int, value: np.ndarray):
        self.tape = tape
        self.index = index
        self.value = value

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def size(self) -> int:
        return self.value.size

    @property
    def T(self):
        from . import ops

        return ops.transpose(self)

    def __len__(self):
        return len(self.value)

    def __repr__(self):
        return f"Var(index={self.index}, shape={self.shape})"

    def __add__(self, other):
        from . import ops

        return ops.add(self, other)

    def __radd__(self, other):
        from . import ops

        return ops.add(other, self)

    def __sub__(self, other):
        from . import ops

        return ops.subtract(self, other)

    def __rsub__(self, other):
        from . import ops

        return ops.subtract(other, self)

    def __mul__(self, other):
        from . import ops

        return ops.multiply(self, other)

    def __rmul__(self, other):
        from . import ops

        return ops.multiply(other, self)

    def __truediv__(self, other):
        from . import ops

        return ops.divide(self, other)

    def __rtruediv__(self, other):
        from . import ops

        return ops.divide(other, self)

    def __matmul__(self, other):
        from . import ops

        return ops.matmul(self, other)

    def __rmatmul__(self, other):
        from . import ops

        return ops.matmul(other, self)

    def __neg__(self):
        from . import ops

        return ops.negative(self)

    def __pow__(self, p):
        from . import ops

        if p == 2:
            return ops.square(self)
        raise NotImplementedError("only square powers are recorded")

    def __getitem__(self, index):
        from . import ops

        return ops.getitem(self, index)


def _finite(value: np.ndarray) -> bool:
    return bool(np.isfinite(value).all())


@dataclass
class Tape:
    """Append-only record of primitive applications.

    Parents always precede children, so a single reverse sweep gives
    vector-Jacobian products and a single forward sweep gives
    Jacobian-vector products.
    """

    check_finite: bool = True
    nodes: list[Node] = field(default_factory=list)
    _masks: dict = field(default_factory=dict, repr=False)

    def __len__(self) -> int:
        return len(self.nodes)

    def leaf(self, value) -> Var:
        value = np.array(value, dtype=np.float64)
        if self.check_finite and not _finite(value):
            raise NonFiniteError(len(self.nodes), "leaf")
        self.nodes.append(Node(None, (), {}, value))
        return Var(self, len(self.nodes) - 1, value)

    def record(self, prim: Primitive, args: Sequence[Any], value: np.ndarray, attrs: dict) -> Var:
        for a in args:
            if isinstance(a, Var) and a.tape is not self:
                raise TapeMismatchError("operands were recorded on different tapes")
        index = len(self.nodes)
        if self.check_finite and not _finite(value):
            raise NonFiniteError(index, prim.name)
        self.nodes.append(Node(prim, tuple(args), attrs, value))
        return Var(self, index, value)

    # -- sweeps ---------------------------------------------------------

    def _dependents(self, sources: Sequence[int], stop: int) -> np.ndarray:
        """Mask of nodes up to ``stop`` that depend on any source index."""
        key = (tuple(sources), stop)
        if key in self._masks:
            return self._masks[key]
        mask = np.zeros(stop + 1, dtype=bool)
        for s in sources:
            if s <= stop:
                mask[s] = True
        start = min(sources) if sources else stop + 1
        for i in range(start, stop + 1):
            if mask[i]:
                continue
            for a in self.nodes[i].args:
                if isinstance(a, Var) and mask[a.index]:
                    mask[i] = True
                    break
        self._masks[key] = mask
        return mask

    def backward(self, output: Var, cotangent, wrt: Sequence[Var], create_graph: bool = False) -> list:
        """Return d<cotangent, output>/d(wrt) for each variable in ``wrt``.

        With ``create_graph`` the backward computation is itself recorded on
        this tape and the results are :class:`Var` handles.
        """
        from . import ops

        if output.tape is not self or any(w.tape is not self for w in wrt):
            raise TapeMismatchError("backward called with variables from another tape")
        if not isinstance(cotangent, Var):
            cotangent = np.asarray(cotangent, dtype=np.float64)
        if tuple(np.shape(cotangent.value if isinstance(cotangent, Var) else cotangent)) != output.shape:
            raise ShapeError(f"cotangent shape {np.shape(cotangent)} does not match output shape {output.shape}")
        stop = output.index
        relevant = self._dependents([w.index for w in wrt], stop)
        grads: dict[int, Any] = {stop: cotangent}
        lowest = min((w.index for w in wrt), default=stop)
        targets = {w.index for w in wrt}
        final: dict[int, Any] = {}
        for i in range(stop, lowest - 1, -1):
            if i not in grads or not relevant[i]:
                continue
            node = self.nodes[i]
            g = grads.pop(i)
            if i in targets:
                # every consumer of node i has a larger index, so g is complete
                final[i] = g
            if node.prim is None or not any(isinstance(a, Var) and relevant[a.index] for a in node.args):
                continue
            if create_graph:
                ins = node.args
                out = Var(self, i, node.value)
            else:
                if isinstance(g, Var):
                    g = g.value
                ins = tuple(a.value if isinstance(a, Var) else a for a in node.args)
                out = node.value
            parts = node.prim.vjp(g, out, *ins, **node.attrs)
            for a, ga in zip(node.args, parts):
                if ga is None or not isinstance(a, Var) or not relevant[a.index]:
                    continue
                j = a.index
                grads[j] = ga if j not in grads else ops.add(grads[j], ga)
        result = []
        for w in wrt:
            g = final.get(w.index)
            if g is None:
                g = np.zeros_like(w.value)
            elif not create_graph and isinstance(g, Var):
                g = g.value
            result.append(g)
        return result

    def jvp(self, output: Var, tangents: dict) -> np.ndarray:
        """Forward-mode tangent of ``output`` given tangents on earlier nodes.

        ``tangents`` maps :class:`Var` (or node index) to an array of the same
        shape as that node's value.
        """
        seeds: dict[int, np.ndarray] = {}
        for key, t in tangents.items():
            idx = key.index if isinstance(key, Var) else int(key)
            t = np.asarray(t, dtype=np.float64)
            if t.shape != self.nodes[idx].value.shape:
                raise ShapeError(f"tangent shape {t.shape} does not match input shape {self.nodes[idx].value.shape}")
            seeds[idx] = t
        stop = output.index
        if not seeds:
            return np.zeros_like(output.value)
        tan: dict[int, np.ndarray] = dict(seeds)
        for i in range(min(seeds), stop + 1):
            if i in seeds:
                continue
            node = self.nodes[i]
            if node.prim is None:
                continue
            arg_t = [tan.get(a.index) if isinstance(a, Var) else None for a in node.args]
            if all(t is None for t in arg_t):
                continue
            vals = tuple(a.value if isinstance(a, Var) else a for a in node.args)
            tan[i] = np.asarray(node.prim.jvp(arg_t, node.value, *vals, **node.attrs), dtype=np.float64)
        return tan.get(stop, np.zeros_like(output.value))

    def replay(self, leaf_values: dict | None = None) -> list[np.ndarray]:
        """Recompute every node's value from the leaves."""
        leaf_values = leaf_values or {}
        values: list[np.ndarray] = []
        for i, node in enumerate(self.nodes):
            if node.prim is None:
                values.append(np.asarray(leaf_values.get(i, node.value), dtype=np.float64))
                continue
            vals = tuple(values[a.index] if isinstance(a, Var) else a for a in node.args)
            values.append(node.prim.impl(*vals, **node.attrs))
        return values
