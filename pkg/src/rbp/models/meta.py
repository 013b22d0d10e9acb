"""An optimizer run viewed as a recurrent system.

The hidden state is the inner model's parameters and velocities ``(theta,
v)`` flattened into one vector; the system parameters are one log learning
rate and one momentum pre-image per parameter group. One application of ``F``
is an SGD-with-momentum step on a batch:

    v' = mu * v - lr * grad(theta),   theta' = theta + v'

with ``lr = exp(s)`` and ``mu = sigmoid(m)``. The inner gradient is itself
recorded when ``theta`` is, so hyper-gradients flow through it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..autodiff import Tape, Var, ops
from ..dynamics import ConvergentSystem

INITIAL_LOG_LR = -1.0
INITIAL_MOMENTUM = 0.5


def logit(p: float) -> float:
    return float(np.log(p) - np.log1p(-p))


@dataclass(frozen=True)
class UnrolledSgdMeta:
    """``groups`` lists ``(name, shape)`` for every inner parameter tensor.

    ``inner_loss(params, batch)`` maps a dict of (possibly recorded)
    parameter tensors and a batch to a scalar; ``meta_loss(params)`` is the
    objective evaluated at the final state.
    """

    groups: tuple
    inner_loss: Callable
    meta_loss: Callable

    @property
    def names(self) -> list[str]:
        return [name for name, _ in self.groups]

    @property
    def sizes(self) -> list[int]:
        return [int(np.prod(shape)) for _, shape in self.groups]

    @property
    def n_params(self) -> int:
        return sum(self.sizes)

    @property
    def state_size(self) -> int:
        return 2 * self.n_params

    def initial_hyper(self, lr: float | None = None, momentum: float = INITIAL_MOMENTUM) -> dict:
        n = len(self.groups)
        s = np.full(n, INITIAL_LOG_LR if lr is None else float(np.log(lr)))
        m = np.full(n, logit(momentum) if momentum not in (0.0, 1.0) else (-np.inf if momentum == 0.0 else np.inf))
        return {"log_lr": s, "momentum_logit": m}

    def pack(self, params: dict, velocity: dict | None = None) -> np.ndarray:
        theta = np.concatenate([np.ravel(params[name]) for name in self.names])
        vel = np.zeros_like(theta) if velocity is None else np.concatenate([np.ravel(velocity[n]) for n in self.names])
        return np.concatenate([theta, vel])

    def split(self, h):
        """``(theta dict, velocity dict)`` views of a packed state (recorded if ``h`` is)."""
        theta, vel = {}, {}
        offset = 0
        n = self.n_params
        for (name, shape), size in zip(self.groups, self.sizes):
            theta[name] = ops.reshape(ops.getitem(h, slice(offset, offset + size)), shape)
            vel[name] = ops.reshape(ops.getitem(h, slice(n + offset, n + offset + size)), shape)
            offset += size
        return theta, vel

    def system(self, hyper: dict | None = None) -> ConvergentSystem:
        return ConvergentSystem(
            F=lambda x, w, h: meta_inner_step(self, h, x, w),
            G=lambda x, w, h: self.meta_loss(self.split(h)[0]),
            loss=lambda y_bar, y: ops.sum(y),
            w_F=self.initial_hyper() if hyper is None else hyper,
            w_G={},
            hidden_shape=(self.state_size,),
        )


def inner_gradient(loss_fn: Callable, params: dict, batch) -> dict:
    """Gradient of ``loss_fn(params, batch)`` w.r.t. each tensor in ``params``.

    Recorded parameters get a recorded gradient (backward pass written onto
    their tape); plain arrays get plain arrays.
    """
    names = list(params)
    recorded = [p for p in params.values() if isinstance(p, Var)]
    if recorded:
        tape = recorded[0].tape
        L = loss_fn(params, batch)
        if not isinstance(L, Var):
            return {k: np.zeros_like(ops.value_of(params[k])) for k in names}
        wrt = [params[k] for k in names]
        grads = tape.backward(L, np.ones(L.shape), wrt, create_graph=True)
        return dict(zip(names, grads))
    tape = Tape()
    leaves = {k: tape.leaf(params[k]) for k in names}
    L = loss_fn(leaves, batch)
    if not np.isfinite(L.value).all():
        raise FloatingPointError("inner loss is not finite")
    grads = tape.backward(L, np.ones(L.shape), [leaves[k] for k in names])
    return dict(zip(names, grads))


def meta_inner_step(meta: UnrolledSgdMeta, h, batch, hyper: dict):
    """One SGD-with-momentum step on the packed state ``h``."""
    theta, vel = meta.split(h)
    grads = inner_gradient(meta.inner_loss, theta, batch)
    lr = ops.exp(hyper["log_lr"])
    mu = ops.sigmoid(hyper["momentum_logit"])
    new_theta, new_vel = [], []
    for i, (name, size) in enumerate(zip(meta.names, meta.sizes)):
        v_new = ops.subtract(ops.multiply(ops.getitem(mu, i), vel[name]), ops.multiply(ops.getitem(lr, i), grads[name]))
        new_vel.append(ops.reshape(v_new, (size,)))
        new_theta.append(ops.reshape(ops.add(theta[name], v_new), (size,)))
    return ops.concatenate(new_theta + new_vel, axis=0)


# -- inner problems -----------------------------------------------------------


def quadratic_problem(
    curvatures, centers, val_centers=None, val_curvatures=None, n_groups: int = 2
) -> UnrolledSgdMeta:
    """Deterministic inner loss ``1/2 sum_i c_i (theta_i - t_i)^2`` split into ``n_groups`` groups.

    The meta objective is a quadratic centred at ``val_centers`` with
    curvatures ``val_curvatures`` (defaults: the training ones).
    """
    c = np.asarray(curvatures, dtype=np.float64)
    t = np.asarray(centers, dtype=np.float64)
    tv = t if val_centers is None else np.asarray(val_centers, dtype=np.float64)
    cv = c if val_curvatures is None else np.asarray(val_curvatures, dtype=np.float64)
    bounds = np.linspace(0, c.size, n_groups + 1).astype(int)
    groups = tuple((f"theta{g}", (int(bounds[g + 1] - bounds[g]),)) for g in range(n_groups))

    def _q(params, curv, centre):
        total = None
        for g, (name, _) in enumerate(groups):
            sl = slice(bounds[g], bounds[g + 1])
            term = ops.sum(ops.multiply(0.5 * curv[sl], ops.square(ops.subtract(params[name], centre[sl]))))
            total = term if total is None else ops.add(total, term)
        return total

    return UnrolledSgdMeta(groups, lambda p, batch: _q(p, c, t), lambda p: _q(p, cv, tv))


def mlp_forward(params: dict, inputs, n_layers: int):
    a = inputs
    for i in range(n_layers):
        a = ops.add(ops.matmul(a, params[f"W{i}"]), params[f"b{i}"])
        if i < n_layers - 1:
            a = ops.tanh(a)
    return a


def softmax_xent(logits, labels) -> object:
    logp = ops.log_softmax(logits, axis=1)
    picked = ops.getitem(logp, (np.arange(len(labels)), np.asarray(labels, dtype=np.intp)))
    return ops.negative(ops.mean(picked))


def mlp_problem(layer_sizes, val_inputs, val_labels) -> UnrolledSgdMeta:
    """tanh MLP classifier; one (lr, momentum) pair per weight matrix and per bias."""
    sizes = list(layer_sizes)
    n_layers = len(sizes) - 1
    groups = []
    for i in range(n_layers):
        groups.append((f"W{i}", (sizes[i], sizes[i + 1])))
        groups.append((f"b{i}", (sizes[i + 1],)))
    val_x = np.asarray(val_inputs, dtype=np.float64)
    val_y = np.asarray(val_labels)

    def inner(params, batch):
        x, y = batch
        return softmax_xent(mlp_forward(params, x, n_layers), y)

    def meta(params):
        return softmax_xent(mlp_forward(params, val_x, n_layers), val_y)

    return UnrolledSgdMeta(tuple(groups), inner, meta)


def init_mlp(layer_sizes, seed: int) -> dict:
    rng = np.random.default_rng(seed)
    params = {}
    for i in range(len(layer_sizes) - 1):
        fan_in = layer_sizes[i]
        params[f"W{i}"] = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(layer_sizes[i], layer_sizes[i + 1]))
        params[f"b{i}"] = np.zeros(layer_sizes[i + 1])
    return params
