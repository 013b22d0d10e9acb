"""Convergent recurrent systems and their forward pass to a fixed point.

A system is the triple ``h' = F(x, w_F, h)``, ``y = G(x, w_G, h)`` and a
scalar ``loss(y_bar, y)``. ``F`` and ``G`` are written with
:mod:`rbp.autodiff.ops`; the forward pass calls them on plain arrays, the
gradient methods call them on recorded variables.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .autodiff import Tape, Var, bundle_vars

Bundle = dict  # name -> ndarray


class DivergenceError(FloatingPointError):
    def __init__(self, step: int, message: str = ""):
        super().__init__(message or f"hidden state became non-finite at step {step}")
        self.step = step


class StepInputs(Sequence):
    """Per-step inputs ``x_0, x_1, ...`` for systems whose input changes each step.

    Step ``t`` (producing ``h_{t+1}``) uses ``x_t``.
    """

    def __init__(self, items):
        self._items = list(items)

    def __getitem__(self, i):
        return self._items[i]

    def __len__(self):
        return len(self._items)

    def __repr__(self):
        return f"StepInputs(n={len(self._items)})"


def input_at(x, t: int):
    return x[t] if isinstance(x, StepInputs) else x


@dataclass(frozen=True)
class ConvergentSystem:
    F: Callable
    G: Callable
    loss: Callable
    w_F: Bundle
    w_G: Bundle = field(default_factory=dict)
    hidden_shape: tuple | Callable | None = None

    def step(self, x, h, w_F: Bundle | None = None):
        return self.F(x, self.w_F if w_F is None else w_F, h)

    def output(self, x, h, w_G: Bundle | None = None):
        return self.G(x, self.w_G if w_G is None else w_G, h)

    def objective(self, x, y_bar, h) -> float:
        return float(self.loss(y_bar, self.output(x, h)))

    def initial_state(self, x) -> np.ndarray:
        shape = self.hidden_shape
        if callable(shape):
            shape = shape(input_at(x, 0))
        if shape is None:
            raise ValueError("system has no hidden_shape; pass h0 explicitly")
        return np.zeros(shape)

    def with_params(self, w_F: Bundle | None = None, w_G: Bundle | None = None) -> "ConvergentSystem":
        return replace(
            self,
            w_F=self.w_F if w_F is None else w_F,
            w_G=self.w_G if w_G is None else w_G,
        )


@dataclass(frozen=True)
class ForwardResult:
    steady_state: np.ndarray
    steps_taken: int
    converged: bool
    diff_norms: tuple
    trajectory: tuple | None = None
    x: object = None

    @property
    def h_star(self) -> np.ndarray:
        return self.steady_state


def iterate(
    system: ConvergentSystem,
    x,
    h0: np.ndarray | None = None,
    max_steps: int = 100,
    tol: float = 1e-6,
    store_trajectory: bool = False,
    extra_steps: int = 0,
) -> ForwardResult:
    """Apply ``h <- F(x, w_F, h)`` until ``||h_{t+1} - h_t||_inf < tol``.

    ``extra_steps`` keeps stepping that many times after convergence is
    detected (used to make the tail of a trajectory stationary). Running out
    of steps is not an error; check ``converged``.
    """
    if max_steps < 1:
        raise ValueError("max_steps must be >= 1")
    if tol <= 0:
        raise ValueError("tol must be positive")
    if isinstance(x, StepInputs):
        max_steps = min(max_steps, len(x))
    h = system.initial_state(x) if h0 is None else np.array(h0, dtype=np.float64)
    traj = [h] if store_trajectory else None
    diffs: list[float] = []
    converged = False
    remaining = None
    t = 0
    while t < max_steps:
        h_next = np.asarray(system.step(input_at(x, t), h), dtype=np.float64)
        t += 1
        if not np.isfinite(h_next).all():
            raise DivergenceError(t)
        d = float(np.max(np.abs(h_next - h))) if h.size else 0.0
        diffs.append(d)
        h = h_next
        if traj is not None:
            traj.append(h)
        if remaining is not None:
            remaining -= 1
            if remaining <= 0:
                break
            continue
        if d < tol:
            converged = True
            if extra_steps <= 0:
                break
            remaining = extra_steps
            if isinstance(x, StepInputs):
                max_steps = min(len(x), t + extra_steps)
            else:
                max_steps = max(max_steps, t + extra_steps)
    return ForwardResult(
        steady_state=h,
        steps_taken=t,
        converged=converged,
        diff_norms=tuple(diffs),
        trajectory=tuple(traj) if traj is not None else None,
        x=x,
    )


class JacobianOperator:
    """Matrix-free access to ``F`` linearized at one state.

    ``F(x, w_F, h)`` is recorded once with ``h`` and every tensor of ``w_F``
    as leaves. The operator then offers ``J^T v``, ``J u`` and
    ``z^T dF/dw_F`` without ever forming ``J``.
    """

    def __init__(self, system: ConvergentSystem, x, h: np.ndarray, w_F: Bundle | None = None):
        self.system = system
        self.x = x
        self.h = np.asarray(h, dtype=np.float64)
        self.tape = Tape()
        self.h_var = self.tape.leaf(self.h)
        self.w_vars = bundle_vars(self.tape, system.w_F if w_F is None else w_F)
        out = system.F(x, self.w_vars, self.h_var)
        if not isinstance(out, Var):
            out = self.tape.leaf(out)
        if out.shape != self.h.shape:
            raise ValueError(f"F changed the hidden-state shape from {self.h.shape} to {out.shape}")
        self.out = out
        self.n_vjp = 0
        self.n_jvp = 0

    @property
    def value(self) -> np.ndarray:
        return self.out.value

    @property
    def dim(self) -> int:
        return self.h.size

    def vjp(self, v: np.ndarray) -> np.ndarray:
        """``J^T v``"""
        self.n_vjp += 1
        (g,) = self.tape.backward(self.out, np.reshape(v, self.h.shape), [self.h_var])
        return g

    def jvp(self, u: np.ndarray) -> np.ndarray:
        """``J u``"""
        self.n_jvp += 1
        return self.tape.jvp(self.out, {self.h_var: np.reshape(u, self.h.shape)})

    def param_vjp(self, z: np.ndarray) -> Bundle:
        """``z^T dF/dw_F`` as a bundle shaped like ``w_F``."""
        names = list(self.w_vars)
        grads = self.tape.backward(self.out, np.reshape(z, self.h.shape), [self.w_vars[k] for k in names])
        return dict(zip(names, grads))

    def vjp_all(self, v: np.ndarray) -> tuple[np.ndarray, Bundle]:
        """``J^T v`` and ``v^T dF/dw_F`` from one reverse sweep."""
        names = list(self.w_vars)
        grads = self.tape.backward(
            self.out, np.reshape(v, self.h.shape), [self.h_var] + [self.w_vars[k] for k in names]
        )
        return grads[0], dict(zip(names, grads[1:]))


@dataclass(frozen=True)
class ContractionEstimate:
    rho_hat: float
    mu_bound: float
    iterations: int


class ZeroVectorError(ArithmeticError):
    pass


def _start_vector(rng: np.random.Generator, shape) -> np.ndarray:
    v = rng.uniform(-1.0, 1.0, size=shape)
    n = np.linalg.norm(v)
    if n == 0.0:
        v = rng.uniform(-1.0, 1.0, size=shape)
        n = np.linalg.norm(v)
        if n == 0.0:
            raise ZeroVectorError("power iteration start vector is zero after reseeding")
    return v / n


def _arnoldi_radius(jv: Callable, v: np.ndarray, m: int) -> float:
    """Largest Ritz-value magnitude from an ``m``-step Arnoldi process."""
    n = v.size
    Q = np.zeros((m + 1, n))
    H = np.zeros((m + 1, m))
    Q[0] = v.ravel() / np.linalg.norm(v)
    k = m
    for j in range(m):
        w = np.asarray(jv(Q[j].reshape(v.shape))).ravel()
        for _ in range(2):  # full re-orthogonalization, twice is enough
            c = Q[: j + 1] @ w
            H[: j + 1, j] += c
            w = w - Q[: j + 1].T @ c
        beta = np.linalg.norm(w)
        H[j + 1, j] = beta
        if beta <= 1e-12 * max(1.0, np.abs(H[: j + 1, : j + 1]).max()):
            k = j + 1
            break
        Q[j + 1] = w / beta
    ritz = np.linalg.eigvals(H[:k, :k])
    return float(np.max(np.abs(ritz))) if ritz.size else 0.0


def spectral_estimate(
    system_or_op,
    x=None,
    h_star: np.ndarray | None = None,
    iters: int = 200,
    seed: int = 0,
    arnoldi_steps: int = 12,
) -> ContractionEstimate:
    """Estimate the spectral radius and operator 2-norm of ``J = dF/dh``.

    The operator norm comes from power iteration on ``J^T J``. The spectral
    radius comes from power iteration on ``J`` followed by a short Arnoldi
    refinement from the power-iterated vector, which also handles a dominant
    complex-conjugate pair where plain power iteration oscillates.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    if isinstance(system_or_op, JacobianOperator):
        op = system_or_op
    else:
        op = JacobianOperator(system_or_op, x, h_star)
    rng = np.random.default_rng(seed)
    shape = op.h.shape

    v = _start_vector(rng, shape)
    sigma2 = 0.0
    for _ in range(iters):
        w = op.vjp(op.jvp(v))
        sigma2 = float(np.vdot(v, w))
        nw = np.linalg.norm(w)
        if nw == 0.0:
            break
        v = w / nw
    mu = float(np.sqrt(max(sigma2, 0.0)))

    u = _start_vector(rng, shape)
    rho = None
    for _ in range(iters):
        w = op.jvp(u)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            rho = 0.0  # u reached the nilpotent part's kernel
            break
        u = w / nw
    if rho is None:
        rho = _arnoldi_radius(op.jvp, u, min(arnoldi_steps, op.dim))
    return ContractionEstimate(rho_hat=float(rho), mu_bound=mu, iterations=iters)


def fixed_point_residual(system: ConvergentSystem, x, h: np.ndarray) -> float:
    return float(np.max(np.abs(np.asarray(system.step(x, h)) - h)))
