"""Penalties that keep ``I - J`` invertible at the fixed point.

The dense penalties accept plain matrices or recorded ones (e.g. a Jacobian
assembled on a tape), so they can be added to a training loss.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .autodiff import ops
from .dynamics import JacobianOperator


def _check_square(J):
    shape = np.shape(ops.value_of(J))
    if len(shape) != 2 or shape[0] != shape[1]:
        raise ValueError(f"expected a square matrix, got shape {shape}")
    return shape[0]


def column_l1_penalty(J, eta: float):
    """``max_i max(0, ||J[:, i]||_1 - eta)^2``.

    Columns whose L1 norm is already below the target contraction ``eta``
    contribute nothing.
    """
    _check_square(J)
    if not 0.0 < eta < 1.0:
        raise ValueError("eta must lie in (0, 1)")
    col = ops.sum(ops.abs(J), axis=0)
    excess = ops.maximum(ops.subtract(col, eta), 0.0)
    return ops.square(ops.max(excess))


def gershgorin_hinge(J, shift: float = 0.0):
    """``max(0, sqrt(n) ||A - I||_F - 1)`` with ``A = (I - J)^T (I - J) + shift*I``.

    Zero penalty certifies ``lambda_min(A) >= 1 - sqrt(n)||A - I||_F >= 0``.
    ``shift`` is the optional small constant for a merely semi-definite ``A``.
    """
    n = _check_square(J)
    eye = np.eye(n)
    B = ops.subtract(eye, J)
    A = ops.matmul(ops.transpose(B), B)
    D = ops.subtract(A, (1.0 - shift) * eye)
    fro = ops.sqrt(ops.add(ops.sum(ops.square(D)), 1e-300))
    return ops.maximum(ops.subtract(ops.multiply(np.sqrt(n), fro), 1.0), 0.0)


@dataclass(frozen=True)
class MinEigEstimate:
    lambda_min_hat: float
    lanczos_steps: int
    ritz_residual: float
    ritz_vector: np.ndarray | None = None


def sturm_count(alpha: np.ndarray, beta: np.ndarray, x: float) -> int:
    """Number of eigenvalues of the symmetric tridiagonal matrix below ``x``."""
    count = 0
    q = 1.0
    tiny = np.finfo(float).tiny
    for i in range(len(alpha)):
        b2 = beta[i - 1] ** 2 if i > 0 else 0.0
        q = alpha[i] - x - (b2 / q if i > 0 else 0.0)
        if q == 0.0:
            q = -tiny
        if q < 0:
            count += 1
    return count


def tridiagonal_min_eig(alpha: np.ndarray, beta: np.ndarray, rtol: float = 1e-15) -> float:
    """Smallest eigenvalue by bisection on Sturm sequence counts."""
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    n = len(alpha)
    if n == 0:
        raise ValueError("empty tridiagonal matrix")
    radius = np.zeros(n)
    if n > 1:
        radius[:-1] += np.abs(beta)
        radius[1:] += np.abs(beta)
    lo = float(np.min(alpha - radius))
    hi = float(np.max(alpha + radius))
    scale = max(abs(lo), abs(hi), np.finfo(float).tiny)
    lo -= 1e-12 * scale
    hi += 1e-12 * scale
    while hi - lo > rtol * scale + np.finfo(float).tiny:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if sturm_count(alpha, beta, mid) >= 1:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def lanczos_min_eig(matvec: Callable[[np.ndarray], np.ndarray], n: int, m: int, seed: int = 0) -> MinEigEstimate:
    """Smallest eigenvalue of a symmetric operator from an ``m``-step Lanczos run.

    Full re-orthogonalization against all previous Lanczos vectors. If the
    Krylov space closes early (zero ``beta``) the estimate comes from the
    space found and ``lanczos_steps < m``.
    """
    if not 1 <= m <= n:
        raise ValueError(f"need 1 <= m <= n, got m={m}, n={n}")
    rng = np.random.default_rng(seed)
    q = rng.uniform(-1.0, 1.0, size=n)
    q /= np.linalg.norm(q)
    Q = np.zeros((m, n))
    alpha = np.zeros(m)
    beta = np.zeros(m)
    steps = 0
    for j in range(m):
        Q[j] = q
        w = np.asarray(matvec(q), dtype=float).ravel()
        alpha[j] = q @ w
        w = w - alpha[j] * q
        if j > 0:
            w = w - beta[j - 1] * Q[j - 1]
        for _ in range(2):
            w = w - Q[: j + 1].T @ (Q[: j + 1] @ w)
        beta[j] = np.linalg.norm(w)
        steps = j + 1
        if beta[j] <= 1e-12 * max(1.0, abs(alpha[: j + 1]).max()):
            break
        q = w / beta[j]
    a, b = alpha[:steps], beta[: steps - 1]
    lam = tridiagonal_min_eig(a, b)
    T = np.diag(a) + np.diag(b, 1) + np.diag(b, -1)
    evals, evecs = np.linalg.eigh(T)
    s = evecs[:, int(np.argmin(np.abs(evals - lam)))]
    residual = float(abs(beta[steps - 1] * s[-1]))
    return MinEigEstimate(lam, steps, residual, Q[:steps].T @ s)


def normal_matvec(op: JacobianOperator, shift: float = 0.0) -> Callable[[np.ndarray], np.ndarray]:
    """``v -> ((I - J)^T (I - J) + shift*I) v`` from one JVP and one VJP."""
    shape = op.h.shape

    def mv(v):
        v = np.reshape(v, shape)
        u = v - op.jvp(v)
        return (u - op.vjp(u) + shift * v).ravel()

    return mv


def min_eig_hinge(estimate: MinEigEstimate | float) -> float:
    lam = estimate.lambda_min_hat if isinstance(estimate, MinEigEstimate) else float(estimate)
    return max(0.0, -lam)
