"""Graph neural network whose node update is a GRU cell."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..autodiff import ops
from ..dynamics import ConvergentSystem

GRU_WEIGHTS = ("W_z", "U_z", "b_z", "W_r", "U_r", "b_r", "W_h", "U_h", "b_h")


def normalized_adjacency(n_nodes: int, edges) -> np.ndarray:
    """Row-normalized adjacency ``D^{-1} A`` (row ``i`` averages over in-neighbours of ``i``).

    ``edges`` holds ``(src, dst)`` pairs; messages flow from ``src`` to
    ``dst``. Nodes without neighbours get an all-zero row.
    """
    A = np.zeros((n_nodes, n_nodes))
    edges = np.asarray(edges, dtype=np.intp).reshape(-1, 2)
    if edges.size and (edges.min() < 0 or edges.max() >= n_nodes):
        raise ValueError("edge endpoint outside [0, n_nodes)")
    A[edges[:, 1], edges[:, 0]] = 1.0
    deg = A.sum(axis=1, keepdims=True)
    return np.divide(A, deg, out=np.zeros_like(A), where=deg > 0)


@dataclass
class GruGraphNet:
    adjacency: np.ndarray  # normalized, n x n
    n_features: int
    hidden_dim: int
    n_classes: int

    def __post_init__(self):
        A = np.asarray(self.adjacency, dtype=np.float64)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError("adjacency must be square")
        self.adjacency = A

    @property
    def n_nodes(self) -> int:
        return self.adjacency.shape[0]

    def init_params(
        self, seed: int = 0, scale: float = 0.1, feature_scale: float = 0.3, candidate_gain: float = 0.7
    ) -> tuple[dict, dict]:
        """Random weights around a propagating start.

        ``W_msg`` starts near the identity and ``W_h`` near ``candidate_gain``
        times the identity, so the untrained steady state already mixes in
        features from several hops (roughly ``sum_k (gain A)^k x``) instead of
        scrambling them through random products.
        """
        rng = np.random.default_rng(seed)
        d, f, c = self.hidden_dim, self.n_features, self.n_classes

        def mat(r, k, s=scale):
            return rng.normal(0.0, s / np.sqrt(r), size=(r, k))

        w_F = {"W_msg": np.eye(d) + mat(d, d), "W_x": mat(f, d, feature_scale)}
        for g in "zrh":
            w_F[f"W_{g}"] = mat(d, d)
            w_F[f"U_{g}"] = mat(d, d)
            w_F[f"b_{g}"] = np.zeros(d)
        w_F["W_h"] = w_F["W_h"] + candidate_gain * np.eye(d)
        w_G = {"W_out": mat(d, c), "b_out": np.zeros(c)}
        return w_F, w_G

    def system(self, w_F: dict, w_G: dict) -> ConvergentSystem:
        return ConvergentSystem(
            F=lambda x, w, h: gnn_step(self, h, x, w),
            G=lambda x, w, h: gnn_readout(h, w),
            loss=node_cross_entropy,
            w_F=w_F,
            w_G=w_G,
            hidden_shape=(self.n_nodes, self.hidden_dim),
        )


def gru_cell(h, inp, w: dict):
    z = ops.sigmoid(ops.add(ops.add(ops.matmul(inp, w["W_z"]), ops.matmul(h, w["U_z"])), w["b_z"]))
    r = ops.sigmoid(ops.add(ops.add(ops.matmul(inp, w["W_r"]), ops.matmul(h, w["U_r"])), w["b_r"]))
    cand = ops.tanh(ops.add(ops.add(ops.matmul(inp, w["W_h"]), ops.matmul(ops.multiply(r, h), w["U_h"])), w["b_h"]))
    return ops.add(ops.multiply(ops.subtract(1.0, z), h), ops.multiply(z, cand))


def gnn_step(net: GruGraphNet, h, features, w: dict):
    """One propagation step: degree-normalized messages, then a GRU update per node.

    ``m_i = mean_{j in N(i)} h_j W_msg + x_i W_x`` and ``h_i' = GRU(h_i, m_i)``.
    """
    hv = ops.value_of(h)
    if np.shape(hv) != (net.n_nodes, net.hidden_dim):
        raise ValueError(f"hidden state must be {(net.n_nodes, net.hidden_dim)}, got {np.shape(hv)}")
    msg = ops.matmul(ops.matmul(net.adjacency, h), w["W_msg"])
    if "W_x" in w and features is not None:
        msg = ops.add(msg, ops.matmul(features, w["W_x"]))
    return gru_cell(h, msg, w)


def gnn_readout(h, w: dict):
    return ops.add(ops.matmul(h, w["W_out"]), w["b_out"])


def node_cross_entropy(y_bar, logits):
    """Mean cross-entropy over labelled nodes; ``y_bar = (node_indices, labels)``."""
    idx, labels = y_bar
    logp = ops.log_softmax(logits, axis=1)
    picked = ops.getitem(logp, (np.asarray(idx, dtype=np.intp), np.asarray(labels, dtype=np.intp)))
    return ops.negative(ops.mean(picked))
