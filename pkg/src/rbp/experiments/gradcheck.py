"""Cross-check the gradient methods against each other on random small systems.

Each check compares two routes to the same quantity and records the relative
error next to its tolerance. The report is plain JSON; a failed check makes
the run fail.
"""

from __future__ import annotations

import numpy as np

from ..autodiff import ops
from ..dynamics import ConvergentSystem, iterate, spectral_estimate
from ..gradients import GradientError, bptt, linearize, neumann_rbp, rbp, tbptt
from .config import ExperimentConfig, forward_steps


def random_tanh_system(n: int, input_dim: int, contraction: float, seed: int):
    """``h' = tanh(W h + U x + b)``, ``y = V h + c``, squared-error loss, with ``||W||_2 = contraction``.

    Returns ``(system, x, y_bar)``. ``tanh' <= 1`` makes ``||J||_2 <= contraction``.
    """
    rng = np.random.default_rng(seed)
    W = rng.normal(size=(n, n))
    W *= contraction / np.linalg.norm(W, 2)
    w_F = {"W": W, "U": rng.normal(size=(n, input_dim)) / np.sqrt(input_dim), "b": 0.1 * rng.normal(size=n)}
    w_G = {"V": rng.normal(size=(2, n)) / np.sqrt(n), "c": 0.1 * rng.normal(size=2)}
    system = ConvergentSystem(
        F=lambda x, w, h: ops.tanh(ops.add(ops.add(ops.matmul(w["W"], h), ops.matmul(w["U"], x)), w["b"])),
        G=lambda x, w, h: ops.add(ops.matmul(w["V"], h), w["c"]),
        loss=lambda y_bar, y: ops.multiply(0.5, ops.sum(ops.square(ops.subtract(y, y_bar)))),
        w_F=w_F,
        w_G=w_G,
        hidden_shape=(n,),
    )
    return system, rng.normal(size=input_dim), rng.normal(size=2)


def expanding_linear_system(n: int, radius: float, seed: int):
    """``h' = W h + x`` with spectral radius ``radius`` (> 1 means no attracting fixed point)."""
    rng = np.random.default_rng(seed)
    W = rng.normal(size=(n, n))
    W *= radius / np.max(np.abs(np.linalg.eigvals(W)))
    system = ConvergentSystem(
        F=lambda x, w, h: ops.add(ops.matmul(w["W"], h), x),
        G=lambda x, w, h: h,
        loss=lambda y_bar, y: ops.sum(y),
        w_F={"W": W},
        hidden_shape=(n,),
    )
    return system, rng.normal(size=n), None


def relative_error(a, b) -> float:
    a = np.ravel(a)
    b = np.ravel(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def _check(name: str, system_id: int, error: float, tol: float, **extra) -> dict:
    return {"property": name, "system": system_id, "error": error, "tol": tol, "passed": bool(error <= tol), **extra}


def check_system(cfg: ExperimentConfig, seed: int) -> list[dict]:
    gc = cfg.gradcheck
    system, x, y_bar = random_tanh_system(gc.hidden_dim, gc.input_dim, gc.contraction, seed)
    flip = -1.0 if gc.inject_sign_flip else 1.0
    results = []
    fr = iterate(system, x, max_steps=forward_steps(cfg), tol=1e-14, store_trajectory=True, extra_steps=max(gc.k_values) + 1)
    lin = linearize(system, x, y_bar, fr)
    exact = bptt(system, x, y_bar, fr).flat()

    # full Neumann series equals BPTT once the forward pass has converged
    neu = neumann_rbp(lin, K=10_000, tol=1e-15)
    results.append(_check("neumann_matches_bptt", seed, relative_error(flip * neu.flat(), exact), 1e-6))

    for K in gc.k_values:
        if K >= 1:
            # truncated BPTT over a stationary tail equals K-term Neumann
            t = tbptt(system, x, y_bar, fr, K)
            n = neumann_rbp(lin, K)
            results.append(_check("tbptt_matches_neumann", seed, relative_error(t.flat(), flip * n.flat()), 1e-8, K=K))
        # K+1 RBP iterations from z0 = 0 equal K-term Neumann
        r = rbp(lin, max_iter=K + 1, epsilon=1e-300, strict=False)
        n = neumann_rbp(lin, K)
        results.append(_check("rbp_matches_neumann", seed, relative_error(r.flat(), flip * n.flat()), 1e-12, K=K))

    est = spectral_estimate(lin.jacobian, seed=seed)
    results.append(_check("contraction_estimate", seed, max(est.mu_bound - gc.contraction, 0.0), 1e-8, mu_bound=est.mu_bound))

    # central differences on one random direction of w_F
    rng = np.random.default_rng(seed + 1)
    direction = {k: rng.normal(size=np.shape(v)) for k, v in system.w_F.items()}

    def objective(scale):
        w = {k: v + scale * direction[k] for k, v in system.w_F.items()}
        s = system.with_params(w_F=w)
        f = iterate(s, x, max_steps=forward_steps(cfg), tol=1e-14)
        return s.objective(x, y_bar, f.steady_state)

    eps = gc.fd_eps
    fd = (objective(eps) - objective(-eps)) / (2 * eps)
    analytic = flip * sum(float(np.vdot(neu.grad_wF[k], direction[k])) for k in direction)
    results.append(_check("finite_difference", seed, relative_error(analytic, fd), 1e-4))
    return results


def check_divergent(cfg: ExperimentConfig, seed: int) -> dict:
    """RBP on a system whose Jacobian has spectral radius 1.2 must fail, and the failure is recorded."""
    system, x, _ = expanding_linear_system(cfg.gradcheck.hidden_dim, 1.2, seed)
    fr = iterate(system, x, max_steps=5, tol=1e-12)
    lin = linearize(system, x, None, fr, allow_unconverged=True)
    try:
        rbp(lin, max_iter=200)
    except GradientError as exc:
        return {"property": "rbp_fails_when_expanding", "system": seed, "expected_error": True,
                "error_type": type(exc).__name__, "passed": True}
    return {"property": "rbp_fails_when_expanding", "system": seed, "expected_error": True,
            "error_type": None, "passed": False}


def run_gradcheck(cfg: ExperimentConfig) -> dict:
    """Run every check on ``n_systems`` random systems per seed; returns the JSON-ready report."""
    results = []
    for seed in cfg.seeds:
        for i in range(cfg.gradcheck.n_systems):
            sid = seed * 1000 + i
            try:
                results.extend(check_system(cfg, sid))
            except Exception as exc:  # a crash is a failed check, not a crashed suite
                results.append({"property": "suite", "system": sid, "passed": False,
                                "error_type": type(exc).__name__, "message": str(exc)})
        if cfg.gradcheck.include_divergent:
            results.append(check_divergent(cfg, seed))
    failed = [r for r in results if not r["passed"]]
    return {
        "experiment": "gradcheck",
        "passed": not failed,
        "n_checks": len(results),
        "n_failed": len(failed),
        "sign_flip_injected": cfg.gradcheck.inject_sign_flip,
        "results": results,
    }
