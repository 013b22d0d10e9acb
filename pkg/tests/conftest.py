import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from rbp.autodiff import ops
from rbp.dynamics import ConvergentSystem

settings.register_profile("default", max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def criterion():
    """``criterion(n, title, ok, detail)`` records one pass/fail line, then asserts."""

    def report(n, title, ok, detail=""):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {n}: {title}" + (f" ({detail})" if detail else "")
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return report


def linear_system(W, b, loss="sum"):
    """``h' = W h + b`` with ``y = h``; loss ``sum(y)`` or ``1/2 ||y - y_bar||^2``."""
    W = np.asarray(W, dtype=float)
    b = np.asarray(b, dtype=float)
    if loss == "sum":
        lf = lambda y_bar, y: ops.sum(y)
    else:
        lf = lambda y_bar, y: ops.multiply(0.5, ops.sum(ops.square(ops.subtract(y, y_bar))))
    return ConvergentSystem(
        F=lambda x, w, h: ops.add(ops.matmul(w["W"], h), w["b"]),
        G=lambda x, w, h: h,
        loss=lf,
        w_F={"W": W, "b": b},
        hidden_shape=b.shape,
    )


def scalar_system(w=0.5, b=1.0):
    """``h' = w h + b`` on a one-element state, ``L = sum(h)``."""
    return ConvergentSystem(
        F=lambda x, p, h: ops.add(ops.multiply(p["w"], h), p["b"]),
        G=lambda x, p, h: h,
        loss=lambda y_bar, y: ops.sum(y),
        w_F={"w": np.array(w), "b": np.array([b])},
        hidden_shape=(1,),
    )


def random_contraction(n, mu, seed):
    rng = np.random.default_rng(seed)
    W = rng.normal(size=(n, n))
    return W * (mu / np.linalg.norm(W, 2))


def rel_err(a, b):
    a, b = np.ravel(a), np.ravel(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def gru_toy_system(seed=0, n_nodes=4, hidden=3, n_features=2, n_classes=2):
    """Small GRU graph network on a ring with a chord; returns ``(system, x, y_bar)``."""
    from rbp.models.gnn import GruGraphNet, normalized_adjacency

    edges = [(i, (i + 1) % n_nodes) for i in range(n_nodes)] + [(0, 2)]
    edges += [(d, s) for s, d in edges]
    net = GruGraphNet(normalized_adjacency(n_nodes, edges), n_features, hidden, n_classes)
    w_F, w_G = net.init_params(seed, scale=0.5, feature_scale=1.0, candidate_gain=0.5)
    rng = np.random.default_rng(seed + 100)
    w_F = {k: v + 0.1 * rng.normal(size=v.shape) for k, v in w_F.items()}
    w_G = {k: v + 0.3 * rng.normal(size=v.shape) for k, v in w_G.items()}
    x = rng.normal(size=(n_nodes, n_features))
    labels = np.arange(n_nodes) % n_classes
    return net.system(w_F, w_G), x, (np.arange(n_nodes), labels)
