"""Associative memory: train a Hopfield net to recall patterns, then probe it with corrupted ones."""

from __future__ import annotations

import time
import warnings
from dataclasses import replace

import numpy as np

from ..dynamics import DivergenceError, iterate
from ..gradients import GradientError, compute_gradient
from ..models.hopfield import HopfieldNet, corrupt_pattern, hopfield_energy, hopfield_readout, hopfield_step
from .config import ExperimentConfig, forward_steps
from .io import TrialRecord, default_patterns_path, load_patterns, loss_halved, summarize
from .runner import map_seeds


class PatternMismatchError(ValueError):
    pass


def build_net(cfg: ExperimentConfig) -> HopfieldNet:
    hc = cfg.hopfield
    return HopfieldNet(hc.n_observed, hc.n_hidden, hc.n_output, hc.a, hc.b, hc.gamma)


def load_training_patterns(cfg: ExperimentConfig) -> np.ndarray:
    path = cfg.data.patterns or default_patterns_path()
    patterns = np.stack(load_patterns(path))
    if patterns.shape[1] != cfg.hopfield.n_observed:
        raise PatternMismatchError(
            f"patterns have {patterns.shape[1]} pixels but the net has {cfg.hopfield.n_observed} observed neurons"
        )
    return patterns


def recall(net: HopfieldNet, M: np.ndarray, pixels: np.ndarray, steps: int, tol: float):
    """Run inference from the clamped start and return ``(continuous, binary)`` outputs."""
    system = net.system({"M": M})
    fr = iterate(system, pixels, max_steps=steps, tol=tol)
    return hopfield_readout(net, fr.steady_state)


def energy_trace(net: HopfieldNet, M: np.ndarray, pixels: np.ndarray, steps: int, gamma: float) -> np.ndarray:
    """Energy after each of ``steps`` Euler updates of size ``gamma`` (rows: steps, cols: patterns)."""
    small = replace(net, gamma=gamma)
    h = small.embed_pixels(pixels)
    trace = [hopfield_energy(small, h, pixels, M)]
    for _ in range(steps):
        h = hopfield_step(small, h, pixels, M)
        trace.append(hopfield_energy(small, h, pixels, M))
    return np.asarray(trace)


def _gradient_kwargs(cfg: ExperimentConfig, seed: int, step: int) -> dict:
    if cfg.method == "rbp":
        # fixed iteration budget, z0 drawn afresh each training step
        return {"z0_mode": cfg.hopfield.rbp_z0, "seed": seed * 100003 + step, "strict": False}
    return {}


def run_hopfield_trial(seed: int, cfg: ExperimentConfig, patterns: np.ndarray) -> TrialRecord:
    hc = cfg.hopfield
    net = build_net(cfg)
    M = net.init_params(seed, scale=hc.init_scale)["M"]
    velocity = np.zeros_like(M)
    corrupted = np.stack([corrupt_pattern(p, hc.corruption_rate, seed=seed * 1000 + i) for i, p in enumerate(patterns)])
    store = cfg.method in ("bptt", "tbptt")
    losses, val = [], []
    status = "ok"
    start = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for step in range(hc.train_steps + 1):
            system = net.system({"M": M})
            try:
                fr = iterate(system, patterns, max_steps=forward_steps(cfg), tol=cfg.forward.tol, store_trajectory=store)
                loss = system.objective(patterns, patterns, fr.steady_state)
                x, _ = recall(net, M, corrupted, forward_steps(cfg), cfg.forward.tol)
            except (DivergenceError, FloatingPointError) as exc:
                status = f"diverged: {exc}"
                break
            if not np.isfinite(loss):
                status = "diverged: non-finite loss"
                break
            losses.append(float(loss))
            val.append(float(np.abs(np.asarray(x) - patterns).sum() / len(patterns)))
            if step == hc.train_steps:
                break
            try:
                report = compute_gradient(
                    cfg.method, system, patterns, patterns, fr, K=cfg.k, allow_unconverged=True,
                    **_gradient_kwargs(cfg, seed, step),
                )
            except (GradientError, FloatingPointError) as exc:
                status = f"gradient failed: {type(exc).__name__}"
                break
            g = report.grad_wF["M"]
            if not np.isfinite(g).all():
                status = "gradient failed: non-finite"
                break
            velocity = hc.momentum * velocity - hc.lr * g
            M = M + velocity
    if status != "ok":
        losses.append(float("nan"))
    diagnostics = {"status": status, "train_steps_done": max(len(losses) - 1, 0)}
    if status == "ok":
        _, clean_bits = recall(net, M, patterns, forward_steps(cfg), cfg.forward.tol)
        _, noisy_bits = recall(net, M, corrupted, forward_steps(cfg), cfg.forward.tol)
        diagnostics["clean_bit_accuracy"] = float(np.mean(clean_bits == patterns))
        diagnostics["corrupted_bit_accuracy"] = float(np.mean(noisy_bits == patterns))
        trace = energy_trace(net, M, corrupted, hc.energy_steps, hc.energy_gamma)
        diagnostics["max_energy_increase"] = float(np.max(np.diff(trace, axis=0)))
    return TrialRecord(
        seed=seed,
        method=cfg.method,
        losses=losses,
        val_metric=val,
        success=loss_halved(losses),
        wall_time=time.perf_counter() - start,
        diagnostics=diagnostics,
    )


def run_hopfield(cfg: ExperimentConfig):
    """Train one net per seed with the configured gradient method; returns ``(records, summary)``."""
    patterns = load_training_patterns(cfg)
    records = map_seeds(run_hopfield_trial, cfg.seeds, cfg.workers, cfg, patterns)
    summary = summarize(records, {"experiment": "hopfield", "k": cfg.k, "n_patterns": int(len(patterns))})
    return records, summary
