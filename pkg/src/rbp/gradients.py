"""Five ways to get dL/dw_F (and dL/dw_G) for a convergent recurrent system.

``bptt`` and ``tbptt`` back-propagate through a stored trajectory. ``rbp``,
``cg_rbp`` and ``neumann_rbp`` work from the steady state alone: they solve
(or approximate) the adjoint system ``(I - J^T) z = seed`` with ``J`` the
Jacobian of ``F`` at ``h*`` and ``seed = (dL/dy dy/dh*)^T``, then return
``z^T dF/dw_F``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .autodiff import Tape, Var, bundle_vars
from .dynamics import (
    ContractionEstimate,
    ConvergentSystem,
    ForwardResult,
    JacobianOperator,
    input_at,
    spectral_estimate,
)

Method = Literal["bptt", "tbptt", "rbp", "cg-rbp", "neumann-rbp"]
METHODS: tuple[str, ...] = ("bptt", "tbptt", "rbp", "cg-rbp", "neumann-rbp")

DEFAULT_K = 20


class GradientError(ArithmeticError):
    pass


class NotConvergedError(GradientError):
    """The forward pass did not reach a fixed point."""


class MissingTrajectoryError(GradientError):
    pass


class RBPConvergenceError(GradientError):
    """Fixed-point iteration on the adjoint did not converge.

    ``report`` holds the gradient built from the last iterate.
    """

    def __init__(self, message: str, residual: float, iterations: int, report: "GradientReport | None" = None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations
        self.report = report


class CGBreakdownError(GradientError):
    pass


class SeriesDivergenceError(GradientError):
    def __init__(self, step: int):
        super().__init__(f"Neumann series term became non-finite at step {step}")
        self.step = step


class BoundError(GradientError):
    pass


@dataclass(frozen=True)
class GradientReport:
    grad_wF: dict
    grad_wG: dict
    method: str
    k_used: int
    residual: float | None = None
    bound: float | None = None
    converged: bool = True
    diagnostics: dict = field(default_factory=dict)

    def flat(self) -> np.ndarray:
        """All gradient entries, w_F bundle first, names sorted."""
        parts = [np.ravel(self.grad_wF[k]) for k in sorted(self.grad_wF)]
        parts += [np.ravel(self.grad_wG[k]) for k in sorted(self.grad_wG)]
        return np.concatenate(parts) if parts else np.zeros(0)


def _output_pass(system: ConvergentSystem, x, y_bar, h: np.ndarray):
    """One reverse pass through ``loss(y_bar, G(x, w_G, h))``.

    Returns ``(loss, y, dL/dh, dL/dw_G)``.
    """
    tape = Tape()
    h_var = tape.leaf(h)
    wg = bundle_vars(tape, system.w_G)
    y = system.G(x, wg, h_var)
    L = system.loss(y_bar, y)
    if not isinstance(L, Var):
        L = tape.leaf(L)
    if L.size != 1:
        raise ValueError("loss must be scalar")
    names = list(wg)
    grads = tape.backward(L, np.ones(L.shape), [h_var] + [wg[k] for k in names])
    y_val = y.value if isinstance(y, Var) else np.asarray(y)
    return float(L.value), y_val, grads[0], dict(zip(names, grads[1:]))


class SteadyLinearization:
    """Everything the RBP-family methods need at ``h*``.

    Holds only the steady state; a trajectory is never retained, so the
    memory of the methods built on it does not depend on how many forward
    steps were taken.
    """

    def __init__(self, system: ConvergentSystem, x, y_bar, h_star: np.ndarray):
        self.system = system
        self.x = x
        self.y_bar = y_bar
        self.h_star = np.asarray(h_star, dtype=np.float64)
        self.loss, self.y, self.cotangent_seed, self._grad_wG = _output_pass(system, x, y_bar, self.h_star)
        self.jacobian = JacobianOperator(system, x, self.h_star)

    def jtv(self, v: np.ndarray) -> np.ndarray:
        return self.jacobian.vjp(v)

    def jv(self, u: np.ndarray) -> np.ndarray:
        return self.jacobian.jvp(u)

    def param_vjp(self, z: np.ndarray) -> dict:
        return self.jacobian.param_vjp(z)

    @property
    def grad_wG(self) -> dict:
        return {k: v.copy() for k, v in self._grad_wG.items()}


def linearize(
    system: ConvergentSystem,
    x,
    y_bar,
    forward: ForwardResult,
    allow_unconverged: bool = False,
) -> SteadyLinearization:
    """Linearize ``F`` and ``loss o G`` at the forward pass's final state.

    Fixed-budget protocols (e.g. a set number of inference updates) pass
    ``allow_unconverged=True`` to use the last state as ``h*`` anyway.
    """
    if not forward.converged and not allow_unconverged:
        raise NotConvergedError(
            f"forward pass did not converge in {forward.steps_taken} steps "
            f"(last difference {forward.diff_norms[-1] if forward.diff_norms else float('nan'):.3g})"
        )
    return SteadyLinearization(system, x, y_bar, forward.steady_state)


def grad_output_params(lin: SteadyLinearization) -> dict:
    """dL/dw_G with ``h*`` held fixed."""
    return lin.grad_wG


def _zeros_like_bundle(bundle: dict) -> dict:
    return {k: np.zeros_like(np.asarray(v, dtype=np.float64)) for k, v in bundle.items()}


def _backprop_steps(system: ConvergentSystem, forward: ForwardResult, x, seed: np.ndarray, n_steps: int):
    """Reverse sweep through the last ``n_steps`` transitions of the trajectory."""
    traj = forward.trajectory
    T = len(traj) - 1
    grad_w = _zeros_like_bundle(system.w_F)
    cot = seed
    for t in range(T - 1, T - 1 - n_steps, -1):
        op = JacobianOperator(system, input_at(x, t), traj[t])
        cot_h, gw = op.vjp_all(cot)
        for k in grad_w:
            grad_w[k] = grad_w[k] + gw[k]
        cot = cot_h
    return grad_w


def _require_trajectory(forward: ForwardResult):
    if forward.trajectory is None:
        raise MissingTrajectoryError("BPTT-style methods need a forward pass run with store_trajectory=True")
    if len(forward.trajectory) != forward.steps_taken + 1:
        raise MissingTrajectoryError("trajectory length does not match steps_taken")


def bptt(system: ConvergentSystem, x, y_bar, forward: ForwardResult) -> GradientReport:
    """Exact gradient through every step ``h^0 -> ... -> h^T``."""
    _require_trajectory(forward)
    h_T = forward.trajectory[-1]
    loss, _, seed, grad_wG = _output_pass(system, input_at(x, forward.steps_taken - 1), y_bar, h_T)
    T = forward.steps_taken
    grad_wF = _backprop_steps(system, forward, x, seed, T)
    return GradientReport(grad_wF, grad_wG, "bptt", T, diagnostics={"loss": loss, "stored_states": T + 1})


def tbptt(system: ConvergentSystem, x, y_bar, forward: ForwardResult, K: int = DEFAULT_K) -> GradientReport:
    """Back-propagation through the tail of the trajectory.

    ``K`` counts Jacobian products, as in ``neumann_rbp``: the sweep covers the
    last ``K + 1`` transitions (every transition when ``K >= steps_taken``), so
    ``K = steps_taken`` is plain BPTT and a stationary tail makes ``tbptt(K)``
    coincide with ``neumann_rbp(K)``.
    """
    _require_trajectory(forward)
    T = forward.steps_taken
    if not 1 <= K <= T:
        raise ValueError(f"K must lie in [1, steps_taken={T}], got {K}")
    h_T = forward.trajectory[-1]
    loss, _, seed, grad_wG = _output_pass(system, input_at(x, T - 1), y_bar, h_T)
    n = min(K + 1, T)
    grad_wF = _backprop_steps(system, forward, x, seed, n)
    return GradientReport(grad_wF, grad_wG, "tbptt", K, diagnostics={"loss": loss, "transitions": n})


def rbp(
    lin: SteadyLinearization,
    epsilon: float = 1e-6,
    max_iter: int = 1000,
    z0_mode: Literal["zeros", "uniform"] = "zeros",
    seed: int = 0,
    strict: bool = True,
) -> GradientReport:
    """Original recurrent back-propagation: fixed-point iteration on ``z``.

    Iterates ``z_i = J^T z_{i-1} + seed`` until ``||z_i - z_{i-1}||_inf <
    epsilon``. ``z0_mode="uniform"`` draws ``z_0`` from U[0, 1] with the given
    seed. Failing to converge within ``max_iter`` raises
    :class:`RBPConvergenceError`; with ``strict=False`` the gradient from the
    last iterate is returned instead, flagged ``converged=False``.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    b = lin.cotangent_seed
    if z0_mode == "zeros":
        z = np.zeros_like(b)
    elif z0_mode in ("uniform", "seeded-uniform"):
        z = np.random.default_rng(seed).uniform(0.0, 1.0, size=b.shape)
    else:
        raise ValueError(f"unknown z0_mode {z0_mode!r}")
    diff = np.inf
    converged = False
    i = 0
    while i < max_iter:
        i += 1
        z_new = lin.jtv(z) + b
        if not np.isfinite(z_new).all():
            raise RBPConvergenceError(f"RBP iterate became non-finite at iteration {i}", np.inf, i)
        diff = float(np.max(np.abs(z_new - z))) if z.size else 0.0
        z = z_new
        if diff < epsilon:
            converged = True
            break
    report = GradientReport(
        lin.param_vjp(z), lin.grad_wG, "rbp", i, residual=diff, converged=converged,
        diagnostics={"aux_vectors": 2},
    )
    if not converged and strict:
        raise RBPConvergenceError(
            f"RBP did not converge in {max_iter} iterations (last difference {diff:.3g})", diff, i, report
        )
    return report


def cg_rbp(lin: SteadyLinearization, max_iter: int = DEFAULT_K, tol: float = 1e-10) -> GradientReport:
    """Conjugate gradient on the normal equations ``(I-J)(I-J^T) z = (I-J) seed``.

    Each iteration costs one ``J^T v`` and one ``J u``. Stops when the
    normal-equation residual drops below ``tol * ||rhs||``. Hitting
    ``max_iter`` first is not an error: the best-effort gradient is returned
    with ``converged=False``. ``residual`` is ``||(I - J^T) z - seed||_2``.
    """
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    if tol <= 0:
        raise ValueError("tol must be positive")
    seed = lin.cotangent_seed

    def normal_op(v):
        u = v - lin.jtv(v)
        return u - lin.jv(u)

    rhs = seed - lin.jv(seed)
    z = np.zeros_like(seed)
    r = rhs.copy()
    p = r.copy()
    rs = float(np.vdot(r, r))
    target = tol * np.sqrt(float(np.vdot(rhs, rhs)))
    converged = np.sqrt(rs) <= target
    it = 0
    while not converged and it < max_iter:
        it += 1
        Ap = normal_op(p)
        curv = float(np.vdot(p, Ap))
        if not curv > 1e-14 * float(np.vdot(p, p)):
            raise CGBreakdownError(f"non-positive curvature {curv:.3g} at CG iteration {it}; I - J is numerically singular")
        alpha = rs / curv
        z = z + alpha * p
        r = r - alpha * Ap
        rs_new = float(np.vdot(r, r))
        if np.sqrt(rs_new) <= target:
            converged = True
            rs = rs_new
            break
        p = r + (rs_new / rs) * p
        rs = rs_new
    residual = float(np.linalg.norm(z - lin.jtv(z) - seed))
    if not converged:
        warnings.warn(f"CG-RBP stopped at max_iter={max_iter} before reaching tol", RuntimeWarning, stacklevel=2)
    return GradientReport(
        lin.param_vjp(z), lin.grad_wG, "cg-rbp", it, residual=residual, converged=bool(converged),
        diagnostics={"normal_residual": float(np.sqrt(rs)), "aux_vectors": 4},
    )


def neumann_rbp(lin: SteadyLinearization, K: int = DEFAULT_K, tol: float | None = None) -> GradientReport:
    """Truncated Neumann series ``g = sum_{k=0}^{K} (J^T)^k seed``.

    Holds two hidden-state-sized vectors whatever ``K`` is. With ``tol`` the
    loop also stops early once ``||v||_inf < tol`` (``K`` is then a cap).
    """
    if K < 0:
        raise ValueError("K must be >= 0")
    v = lin.cotangent_seed.copy()
    g = v.copy()
    k = 0
    while k < K:
        if tol is not None and float(np.max(np.abs(v))) < tol:
            break
        v = lin.jtv(v)
        k += 1
        if not np.isfinite(v).all():
            raise SeriesDivergenceError(k)
        g += v
    return GradientReport(
        lin.param_vjp(g), lin.grad_wG, "neumann-rbp", k,
        diagnostics={"last_term_inf_norm": float(np.max(np.abs(v))) if v.size else 0.0, "aux_vectors": 2},
    )


def truncation_error_bound(source, K: int, iters: int = 200, seed: int = 0) -> float:
    """Upper bound on ``||sum_{k=0}^{K} J^k - (I - J)^{-1}||_2``.

    Uses ``||(I - J)^{-1}|| <= 1 / (1 - ||J||)`` so the bound is
    ``||J||^{K+1} / (1 - ||J||)``. ``source`` is a
    :class:`ContractionEstimate`, a :class:`SteadyLinearization`, or a number
    giving ``||J||`` directly.
    """
    if K < 0:
        raise ValueError("K must be >= 0")
    if isinstance(source, ContractionEstimate):
        mu = source.mu_bound
    elif isinstance(source, SteadyLinearization):
        mu = spectral_estimate(source.jacobian, iters=iters, seed=seed).mu_bound
    else:
        mu = float(source)
    if not mu < 1.0:
        raise BoundError(f"operator norm estimate {mu:.6g} >= 1; the bound is vacuous")
    return mu ** (K + 1) / (1.0 - mu)


def compute_gradient(
    method: str,
    system: ConvergentSystem,
    x,
    y_bar,
    forward: ForwardResult,
    K: int = DEFAULT_K,
    allow_unconverged: bool = False,
    **kwargs,
) -> GradientReport:
    """Dispatch by method name (``bptt``, ``tbptt``, ``rbp``, ``cg-rbp``, ``neumann-rbp``).

    For ``rbp`` the truncation count ``K`` is the iteration budget; other
    keyword arguments go to the method.
    """
    if method == "bptt":
        return bptt(system, x, y_bar, forward)
    if method == "tbptt":
        return tbptt(system, x, y_bar, forward, min(K, forward.steps_taken))
    lin = linearize(system, x, y_bar, forward, allow_unconverged=allow_unconverged)
    if method == "rbp":
        return rbp(lin, max_iter=K, **kwargs)
    if method == "cg-rbp":
        return cg_rbp(lin, max_iter=K, **kwargs)
    if method == "neumann-rbp":
        return neumann_rbp(lin, K, **kwargs)
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
