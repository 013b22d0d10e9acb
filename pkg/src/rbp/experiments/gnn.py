"""Semi-supervised node classification with a GRU graph network.

Graphs come from files or from a stochastic block model whose node features
are weak, noisy copies of a per-class mean; the graph structure carries the
rest of the signal. A per-node softmax regression on the features alone is
the baseline.
"""

from __future__ import annotations

import time
import warnings

import numpy as np

from ..dynamics import DivergenceError, iterate
from ..gradients import GradientError, compute_gradient
from ..models.gnn import GruGraphNet, normalized_adjacency
from .config import ExperimentConfig, forward_steps
from .io import Graph, TrialRecord, load_graph, summarize
from .runner import map_seeds


class GraphMismatchError(ValueError):
    pass


def stochastic_block_model(
    block_sizes, p_in: float, p_out: float, n_features: int, signal: float, seed: int
) -> Graph:
    """Undirected SBM; features are ``signal * class_mean + N(0, I)`` with +-1 class means."""
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(len(block_sizes)), block_sizes)
    n = labels.size
    same = labels[:, None] == labels[None, :]
    prob = np.where(same, p_in, p_out)
    upper = np.triu(rng.random((n, n)) < prob, k=1)
    src, dst = np.nonzero(upper)
    edges = np.concatenate([np.stack([src, dst], 1), np.stack([dst, src], 1)])
    edges = edges[np.lexsort((edges[:, 1], edges[:, 0]))]
    means = rng.choice([-1.0, 1.0], size=(len(block_sizes), n_features))
    features = signal * means[labels] + rng.normal(size=(n, n_features))
    return Graph(n, edges.astype(np.intp), features, labels.astype(np.intp))


def split_nodes(labels: np.ndarray, fractions, seed: int):
    """Random train/val/test split in the given fractions.

    Every class keeps at least one training node, so a 1% split of a small
    graph still sees each label.
    """
    rng = np.random.default_rng(seed)
    n = labels.size
    order = rng.permutation(n)
    n_train = max(int(round(fractions[0] * n)), 1)
    train = []
    for c in np.unique(labels):
        train.append(order[labels[order] == c][0])
    for i in order:
        if len(train) >= n_train:
            break
        if i not in train:
            train.append(i)
    train = np.array(sorted(train), dtype=np.intp)
    rest = np.array([i for i in order if i not in set(train.tolist())], dtype=np.intp)
    n_val = int(round(fractions[1] / (fractions[1] + fractions[2]) * rest.size)) if fractions[1] + fractions[2] > 0 else 0
    val = np.sort(rest[:n_val])
    test = np.sort(rest[n_val:])
    return train, val, test


def softmax_regression(features, labels, train_idx, n_classes: int, steps: int, lr: float, l2: float = 1e-3):
    """Multinomial logistic regression by full-batch gradient descent; returns ``(W, b)``."""
    X = features[train_idx]
    Y = np.eye(n_classes)[labels[train_idx]]
    W = np.zeros((features.shape[1], n_classes))
    b = np.zeros(n_classes)
    for _ in range(steps):
        logits = X @ W + b
        logits -= logits.max(axis=1, keepdims=True)
        P = np.exp(logits)
        P /= P.sum(axis=1, keepdims=True)
        G = (P - Y) / len(train_idx)
        W -= lr * (X.T @ G + l2 * W)
        b -= lr * G.sum(axis=0)
    return W, b


def accuracy(logits, labels, idx) -> float:
    if len(idx) == 0:
        return float("nan")
    return float(np.mean(np.argmax(logits[idx], axis=1) == labels[idx]))


def trial_graph(cfg: ExperimentConfig, seed: int) -> Graph:
    gc = cfg.gnn
    if cfg.data.edges or cfg.data.features or cfg.data.labels:
        if not (cfg.data.edges and cfg.data.features and cfg.data.labels):
            raise GraphMismatchError("a file graph needs data.edges, data.features and data.labels")
        return load_graph(cfg.data.edges, cfg.data.features, cfg.data.labels)
    return stochastic_block_model([gc.block_size] * gc.n_blocks, gc.p_in, gc.p_out, gc.n_features, gc.feature_signal, seed)


def run_gnn_trial(seed: int, cfg: ExperimentConfig) -> TrialRecord:
    gc = cfg.gnn
    graph = trial_graph(cfg, seed)
    n_classes = max(graph.n_classes, 2)
    train, val, test = split_nodes(graph.labels, gc.split, seed + 1)
    net = GruGraphNet(normalized_adjacency(graph.n_nodes, graph.edges), graph.features.shape[1], gc.hidden_dim, n_classes)
    w_F, w_G = net.init_params(seed, gc.init_scale, gc.feature_scale, gc.candidate_gain)
    vel_F = {k: np.zeros_like(v) for k, v in w_F.items()}
    vel_G = {k: np.zeros_like(v) for k, v in w_G.items()}
    y_bar = (train, graph.labels[train])
    store = cfg.method in ("bptt", "tbptt")
    kwargs = {"strict": False} if cfg.method == "rbp" else {}
    losses, val_acc = [], []
    status = "ok"
    steps_used = []
    start = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for step in range(gc.train_steps + 1):
            system = net.system(w_F, w_G)
            try:
                fr = iterate(system, graph.features, max_steps=forward_steps(cfg), tol=cfg.forward.tol, store_trajectory=store)
            except DivergenceError as exc:
                status = f"diverged: {exc}"
                break
            steps_used.append(fr.steps_taken)
            logits = np.asarray(system.output(graph.features, fr.steady_state))
            losses.append(system.objective(graph.features, y_bar, fr.steady_state))
            val_acc.append(accuracy(logits, graph.labels, val))
            if step == gc.train_steps:
                break
            try:
                report = compute_gradient(
                    cfg.method, system, graph.features, y_bar, fr, K=cfg.k, allow_unconverged=True, **kwargs
                )
            except GradientError as exc:
                status = f"gradient failed: {type(exc).__name__}"
                break
            for params, vel, grads in ((w_F, vel_F, report.grad_wF), (w_G, vel_G, report.grad_wG)):
                for k in params:
                    vel[k] = gc.momentum * vel[k] - gc.lr * grads[k]
                    params[k] = params[k] + vel[k]
    W, b = softmax_regression(graph.features, graph.labels, train, n_classes, gc.baseline_steps, gc.baseline_lr)
    base_logits = graph.features @ W + b
    diagnostics = {
        "status": status,
        "baseline_test_accuracy": accuracy(base_logits, graph.labels, test),
        "baseline_val_accuracy": accuracy(base_logits, graph.labels, val),
        "mean_forward_steps": float(np.mean(steps_used)) if steps_used else 0.0,
        "n_train": int(train.size),
        "n_val": int(val.size),
        "n_test": int(test.size),
    }
    if status == "ok":
        diagnostics["train_accuracy"] = accuracy(logits, graph.labels, train)
        diagnostics["test_accuracy"] = accuracy(logits, graph.labels, test)
    else:
        losses.append(float("nan"))
        diagnostics["test_accuracy"] = float("nan")
    return TrialRecord(
        seed=seed,
        method=cfg.method,
        losses=[float(v) for v in losses],
        val_metric=val_acc,
        success=status == "ok",
        wall_time=time.perf_counter() - start,
        diagnostics=diagnostics,
    )


def run_gnn(cfg: ExperimentConfig):
    records = map_seeds(run_gnn_trial, cfg.seeds, cfg.workers, cfg)
    test = [r.diagnostics["test_accuracy"] for r in records]
    base = [r.diagnostics["baseline_test_accuracy"] for r in records]
    extra = {
        "experiment": "gnn",
        "k": cfg.k,
        "test_accuracy_mean": float(np.mean(test)),
        "test_accuracy_std": float(np.std(test)),
        "baseline_test_accuracy_mean": float(np.mean(base)),
        "baseline_test_accuracy_std": float(np.std(base)),
    }
    return records, summarize(records, extra)
