"""Continuous Hopfield network discretized by explicit Euler steps.

Neurons are ordered ``[observed | hidden | output]``. Observed neurons are
clamped to the input pixels; output neuron ``i`` is trained to reproduce pixel
``i``. States may carry a leading batch axis (one row per pattern).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..autodiff import ops
from ..dynamics import ConvergentSystem


@dataclass(frozen=True)
class HopfieldNet:
    n_observed: int = 64
    n_hidden: int = 128
    n_output: int = 64
    a: float = 1.0
    b: float = 0.5
    gamma: float = 0.5

    def __post_init__(self):
        if self.a <= 0 or self.b <= 0:
            raise ValueError("a and b must be positive")
        if self.n_output != self.n_observed:
            raise ValueError("output neurons mirror observed pixels; n_output must equal n_observed")

    @property
    def n_neurons(self) -> int:
        return self.n_observed + self.n_hidden + self.n_output

    @property
    def observed(self) -> slice:
        return slice(0, self.n_observed)

    @property
    def output(self) -> slice:
        return slice(self.n_observed + self.n_hidden, self.n_neurons)

    def init_params(self, seed: int = 0, scale: float = 0.1) -> dict:
        rng = np.random.default_rng(seed)
        M = rng.normal(0.0, scale / np.sqrt(self.n_neurons), size=(self.n_neurons, self.n_neurons))
        return {"M": M}

    def free_mask(self) -> np.ndarray:
        mask = np.ones(self.n_neurons)
        mask[self.observed] = 0.0
        return mask

    def embed_pixels(self, pixels) -> np.ndarray:
        """External input ``I``: pixels on observed neurons, zero elsewhere."""
        pixels = np.asarray(pixels, dtype=np.float64)
        if pixels.shape[-1] != self.n_observed:
            raise ValueError(f"expected {self.n_observed} pixels, got {pixels.shape[-1]}")
        full = np.zeros(pixels.shape[:-1] + (self.n_neurons,))
        full[..., self.observed] = pixels
        return full

    def system(self, params: dict) -> ConvergentSystem:
        M0 = params["M"]
        W0 = symmetric(np.asarray(M0))

        def F(x, w, h):
            # reuse the symmetrized weights unless M is being recorded
            return hopfield_step(self, h, x, w["M"], W=W0 if w["M"] is M0 else None)

        return ConvergentSystem(
            F=F,
            G=lambda x, w, h: hopfield_readout(self, h)[0],
            loss=l1_loss,
            w_F=params,
            w_G={},
            hidden_shape=lambda x: np.shape(x)[:-1] + (self.n_neurons,),
        )


def symmetric(M):
    return ops.multiply(0.5, ops.add(M, ops.transpose(M)))


def hopfield_step(net: HopfieldNet, h, pixels, M, W=None):
    """One Euler step of ``dh/dt = -b h / a + W phi(b h) + I``, then re-clamp.

    ``W = (M + M^T) / 2``; pass ``W`` to skip recomputing it. Works on plain
    arrays or recorded variables.
    """
    I = net.embed_pixels(pixels)
    if np.shape(ops.value_of(h)) != I.shape:
        raise ValueError(f"state shape {np.shape(ops.value_of(h))} does not match input shape {I.shape}")
    if W is None:
        W = symmetric(M)
    act = ops.sigmoid(ops.multiply(net.b, h))
    field = ops.matmul(act, W) if np.ndim(ops.value_of(h)) == 2 else ops.matmul(W, act)
    drift = ops.add(ops.subtract(field, ops.multiply(net.b / net.a, h)), I)
    h_new = ops.add(h, ops.multiply(net.gamma, drift))
    # exact clamping: observed entries become 0 + pixel
    return ops.add(ops.multiply(h_new, net.free_mask()), I * (1.0 - net.free_mask()))


def hopfield_readout(net: HopfieldNet, h):
    """Continuous output ``x = phi(b h)`` on output neurons and its binarization (x > 0.5)."""
    idx = (Ellipsis, net.output)
    x = ops.sigmoid(ops.multiply(net.b, ops.getitem(h, idx)))
    binary = (np.asarray(ops.value_of(x)) > 0.5).astype(np.float64)
    return x, binary


def l1_loss(y_bar, y):
    """Sum of absolute errors per pattern, averaged over patterns."""
    err = ops.sum(ops.abs(ops.subtract(y, y_bar)))
    n_patterns = int(np.prod(np.shape(ops.value_of(y))[:-1])) or 1
    return ops.multiply(err, 1.0 / n_patterns)


def _xlogx(x: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(x > 0.0, x * np.log(np.where(x > 0.0, x, 1.0)), 0.0)


def hopfield_energy(net: HopfieldNet, h, pixels, M, shift: bool = False):
    """Lyapunov energy of the state(s) ``h``.

    ``sum_i [(1/a) int_0^{x_i} logit(t) dt - I_i x_i] - 1/2 x^T W x`` with
    ``x = phi(b h)``; the integral is ``x ln x + (1 - x) ln(1 - x)``.
    ``shift=True`` adds ``ln 2 / a`` per neuron so a neuron at ``x = 1/2``
    contributes zero. Returns one value per pattern for batched states.
    """
    h = np.asarray(h, dtype=np.float64)
    W = 0.5 * (M + M.T)
    x = ops.sigmoid(net.b * h)
    integral = _xlogx(x) + _xlogx(1.0 - x)
    if shift:
        integral = integral + np.log(2.0)
    I = net.embed_pixels(pixels)
    quad = np.einsum("...i,ij,...j->...", x, W, x)
    E = np.sum(integral / net.a - I * x, axis=-1) - 0.5 * quad
    return float(E) if np.ndim(E) == 0 else E


def corrupt_pattern(pattern, rate: float, seed: int = 0) -> np.ndarray:
    """Zero ``floor(rate * #nonzero)`` nonzero pixels chosen uniformly without replacement."""
    if not 0.0 <= rate <= 1.0:
        raise ValueError("rate must lie in [0, 1]")
    pattern = np.asarray(pattern, dtype=np.float64)
    out = pattern.copy()
    nz = np.flatnonzero(pattern)
    n = int(np.floor(rate * nz.size + 1e-12))
    if n:
        rng = np.random.default_rng(seed)
        out.flat[rng.choice(nz, size=n, replace=False)] = 0.0
    return out
