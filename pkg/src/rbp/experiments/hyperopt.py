"""Hyperparameter optimization: tune per-group learning rates and momenta by hyper-gradients.

Each meta step trains the inner model from the same initialization for
``inner_steps`` SGD-with-momentum steps (one minibatch per step), computes the
gradient of the validation loss w.r.t. the hyperparameters with the configured
method, and takes one Adam step on them.
"""

from __future__ import annotations

import math
import time
import warnings
from pathlib import Path

import numpy as np

from ..dynamics import DivergenceError, StepInputs, iterate
from ..gradients import GradientError, compute_gradient, linearize, neumann_rbp, cg_rbp, rbp
from ..models.meta import UnrolledSgdMeta, init_mlp, mlp_forward, mlp_problem, quadratic_problem, softmax_xent
from .config import ExperimentConfig
from .io import TrialRecord, summarize, write_states_csv
from .runner import map_seeds


class Adam:
    """Adam on a dict of arrays."""

    def __init__(self, lr: float = 0.05, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: dict = {}
        self.v: dict = {}
        self.t = 0

    def step(self, params: dict, grads: dict) -> dict:
        self.t += 1
        out = {}
        for k, p in params.items():
            g = np.asarray(grads[k], dtype=np.float64)
            self.m[k] = self.beta1 * self.m.get(k, np.zeros_like(g)) + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v.get(k, np.zeros_like(g)) + (1 - self.beta2) * g * g
            m_hat = self.m[k] / (1 - self.beta1 ** self.t)
            v_hat = self.v[k] / (1 - self.beta2 ** self.t)
            out[k] = p - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return out


def teacher_classification(n: int, dim: int, seed: int, noise: float = 0.05):
    """Two-class data labelled by a fixed random tanh teacher, with a little label noise.

    The teacher depends only on ``dim`` so train and validation sets drawn
    with different seeds share it.
    """
    teacher = np.random.default_rng(12345 + dim)
    A = teacher.normal(size=(dim, 8)) / np.sqrt(dim)
    w = teacher.normal(size=8)
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, dim))
    y = (np.tanh(X @ A) @ w > 0).astype(np.intp)
    flip = rng.random(n) < noise
    y[flip] = 1 - y[flip]
    return X, y


def build_problem(cfg: ExperimentConfig, seed: int):
    """Return ``(meta, theta0 dict, batches StepInputs, full_train)``."""
    hc = cfg.hyperopt
    if hc.task == "quadratic":
        rng = np.random.default_rng(seed)
        dim = hc.quadratic_dim
        curv = np.logspace(-2, 0, dim)
        centers = rng.normal(size=dim)
        meta = quadratic_problem(curv, centers, val_curvatures=np.ones(dim), n_groups=2)
        theta0 = {name: np.zeros(shape) for name, shape in meta.groups}
        batches = StepInputs([None] * hc.inner_steps)
        return meta, theta0, batches, None
    sizes = list(hc.layer_sizes)
    X, y = teacher_classification(hc.n_train, sizes[0], seed)
    Xv, yv = teacher_classification(hc.n_val, sizes[0], seed + 7919)
    meta = mlp_problem(sizes, Xv, yv)
    theta0 = init_mlp(sizes, seed)
    rng = np.random.default_rng(seed + 1)
    batches = []
    for _ in range(hc.inner_steps):
        idx = rng.choice(hc.n_train, size=min(hc.batch_size, hc.n_train), replace=False)
        batches.append((X[idx], y[idx]))
    return meta, theta0, StepInputs(batches), (X, y)


def initial_hyper(meta: UnrolledSgdMeta, cfg: ExperimentConfig) -> dict:
    hc = cfg.hyperopt
    n = len(meta.groups)
    m = math.log(hc.init_momentum) - math.log1p(-hc.init_momentum)
    return {"log_lr": np.full(n, math.log(hc.init_lr)), "momentum_logit": np.full(n, m)}


def hyper_values(hyper: dict) -> dict:
    """Learning rates and momenta in their natural units."""
    s = np.asarray(hyper["log_lr"])
    m = np.asarray(hyper["momentum_logit"])
    return {"learning_rates": np.exp(s).tolist(), "momenta": (1.0 / (1.0 + np.exp(-m))).tolist()}


def _inner_train_loss(meta: UnrolledSgdMeta, theta: dict, full_train) -> float:
    if full_train is None:
        return float(meta.inner_loss(theta, None))
    X, y = full_train
    n_layers = len(meta.groups) // 2
    return float(softmax_xent(mlp_forward(theta, X, n_layers), y))


def hyper_gradient(cfg: ExperimentConfig, meta: UnrolledSgdMeta, hyper: dict, h0, batches: StepInputs):
    """Unroll the inner run and return ``(meta_loss, final_state, grad dict)``.

    BPTT/TBPTT walk back through the stored run with each step's own batch.
    The RBP family linearizes at the final state and averages the hyper-
    gradient over the last ``n_meta_batches`` minibatches.
    """
    hc = cfg.hyperopt
    system = meta.system(hyper)
    store = cfg.method in ("bptt", "tbptt")
    fr = iterate(system, batches, h0=h0, max_steps=len(batches), tol=1e-300, store_trajectory=store)
    meta_loss = system.objective(batches[len(batches) - 1], None, fr.steady_state)
    if store:
        report = compute_gradient(cfg.method, system, batches, None, fr, K=cfg.k, allow_unconverged=True)
        return meta_loss, fr.steady_state, report.grad_wF
    n_avg = max(1, min(hc.n_meta_batches, len(batches)))
    total = {k: np.zeros_like(v) for k, v in hyper.items()}
    for j in range(n_avg):
        x = batches[len(batches) - 1 - j]
        lin = linearize(system, x, None, fr, allow_unconverged=True)
        if cfg.method == "neumann-rbp":
            report = neumann_rbp(lin, cfg.k)
        elif cfg.method == "cg-rbp":
            report = cg_rbp(lin, max_iter=cfg.k)
        else:
            report = rbp(lin, max_iter=cfg.k, strict=False)
        for k in total:
            total[k] = total[k] + report.grad_wF[k] / n_avg
    return meta_loss, fr.steady_state, total


def run_hyperopt_trial(seed: int, cfg: ExperimentConfig) -> TrialRecord:
    hc = cfg.hyperopt
    meta, theta0, batches, full_train = build_problem(cfg, seed)
    h0 = meta.pack(theta0)
    hyper = initial_hyper(meta, cfg)
    adam = Adam(hc.meta_lr, hc.beta1, hc.beta2, hc.eps)
    meta_losses, train_losses, states = [], [], []
    status = "ok"
    start = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for step in range(hc.meta_steps + 1):
            try:
                if step == hc.meta_steps:
                    # final evaluation only; no gradient needed
                    fr = iterate(meta.system(hyper), batches, h0=h0, max_steps=len(batches), tol=1e-300)
                    loss, h_T, grad = meta.system(hyper).objective(None, None, fr.steady_state), fr.steady_state, None
                else:
                    loss, h_T, grad = hyper_gradient(cfg, meta, hyper, h0, batches)
            except (DivergenceError, GradientError, FloatingPointError) as exc:
                status = f"diverged: {type(exc).__name__}"
                break
            if not math.isfinite(loss):
                status = "diverged: non-finite meta loss"
                break
            meta_losses.append(float(loss))
            train_losses.append(_inner_train_loss(meta, meta.split(h_T)[0], full_train))
            states.append(h_T[: meta.n_params])
            if grad is None:
                break
            if not all(np.isfinite(g).all() for g in grad.values()):
                status = "diverged: non-finite hyper-gradient"
                break
            hyper = adam.step(hyper, grad)
    if status != "ok":
        meta_losses.append(float("nan"))
    if hc.dump_states and cfg.out and states:
        write_states_csv(Path(cfg.out) / f"states_{cfg.method}_seed{seed}.csv", states)
    diagnostics = {"status": status, "task": hc.task, "n_hyperparameters": 2 * len(meta.groups)}
    diagnostics.update(hyper_values(hyper))
    return TrialRecord(
        seed=seed,
        method=cfg.method,
        losses=meta_losses,
        val_metric=train_losses,
        success=status == "ok" and meta_losses[-1] <= meta_losses[0],
        wall_time=time.perf_counter() - start,
        diagnostics=diagnostics,
    )


def run_hyperopt(cfg: ExperimentConfig):
    """Meta-train per seed; ``losses`` hold the meta loss per meta step, ``val_metric`` the final inner training loss."""
    records = map_seeds(run_hyperopt_trial, cfg.seeds, cfg.workers, cfg)
    return records, summarize(records, {"experiment": "hyperopt", "k": cfg.k, "task": cfg.hyperopt.task})
