"""Experiment configuration: nested dataclasses loaded from JSON.

Unknown keys are rejected so that a typo never silently falls back to a
default.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from pathlib import Path
from typing import Any, get_type_hints

from ..gradients import METHODS

EXPERIMENTS = ("hopfield", "gnn", "hyperopt", "gradcheck")
TRUNCATED = ("tbptt", "rbp", "cg-rbp", "neumann-rbp")


class ConfigError(ValueError):
    pass


@dataclass
class ForwardConfig:
    max_steps: int | None = None  # None: the experiment's own default
    tol: float = 1e-6


@dataclass
class HopfieldConfig:
    n_observed: int = 64
    n_hidden: int = 128
    n_output: int = 64
    a: float = 1.0
    b: float = 0.5
    gamma: float = 0.1
    init_scale: float = 1.0
    train_steps: int = 30
    lr: float = 0.05
    momentum: float = 0.9
    corruption_rate: float = 0.5
    rbp_z0: str = "uniform"
    energy_gamma: float = 0.01
    energy_steps: int = 200


@dataclass
class GnnConfig:
    n_blocks: int = 2
    block_size: int = 100
    p_in: float = 0.1
    p_out: float = 0.01
    n_features: int = 8
    feature_signal: float = 0.5
    hidden_dim: int = 16
    init_scale: float = 0.1
    feature_scale: float = 0.3
    candidate_gain: float = 0.7
    train_steps: int = 40
    lr: float = 0.1
    momentum: float = 0.9
    split: list = field(default_factory=lambda: [0.01, 0.49, 0.5])
    baseline_steps: int = 500
    baseline_lr: float = 0.5


@dataclass
class HyperoptConfig:
    task: str = "mlp"
    layer_sizes: list = field(default_factory=lambda: [16, 8, 8, 2])
    n_train: int = 128
    n_val: int = 256
    batch_size: int = 32
    inner_steps: int = 1000
    meta_steps: int = 20
    meta_lr: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    n_meta_batches: int = 10
    init_lr: float = math.exp(-1.0)
    init_momentum: float = 0.5
    quadratic_dim: int = 4
    dump_states: bool = False


@dataclass
class GradcheckConfig:
    n_systems: int = 5
    hidden_dim: int = 6
    input_dim: int = 3
    contraction: float = 0.6
    k_values: list = field(default_factory=lambda: [0, 1, 5, 20])
    fd_eps: float = 1e-5
    include_divergent: bool = True
    inject_sign_flip: bool = False


@dataclass
class DataConfig:
    patterns: str | None = None
    edges: str | None = None
    features: str | None = None
    labels: str | None = None


@dataclass
class ExperimentConfig:
    experiment: str = "gradcheck"
    method: str = "neumann-rbp"
    k: int = 20
    seeds: list = field(default_factory=lambda: [0])
    workers: int = 1
    out: str | None = None
    forward: ForwardConfig = field(default_factory=ForwardConfig)
    hopfield: HopfieldConfig = field(default_factory=HopfieldConfig)
    gnn: GnnConfig = field(default_factory=GnnConfig)
    hyperopt: HyperoptConfig = field(default_factory=HyperoptConfig)
    gradcheck: GradcheckConfig = field(default_factory=GradcheckConfig)
    data: DataConfig = field(default_factory=DataConfig)

    def validate(self) -> "ExperimentConfig":
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"experiment must be one of {EXPERIMENTS}, got {self.experiment!r}")
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.method in TRUNCATED and self.k < 1:
            raise ConfigError(f"k must be >= 1 for {self.method}")
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if (self.forward.max_steps is not None and self.forward.max_steps < 1) or not self.forward.tol > 0:
            raise ConfigError("forward.max_steps must be >= 1 and forward.tol > 0")
        if not 0.0 <= self.hopfield.corruption_rate <= 1.0:
            raise ConfigError("hopfield.corruption_rate must lie in [0, 1]")
        if self.hopfield.rbp_z0 not in ("zeros", "uniform"):
            raise ConfigError("hopfield.rbp_z0 must be 'zeros' or 'uniform'")
        split = self.gnn.split
        if len(split) != 3 or min(split) < 0 or abs(sum(split) - 1.0) > 1e-9:
            raise ConfigError("gnn.split must be three non-negative fractions summing to 1")
        if self.hyperopt.task not in ("mlp", "quadratic"):
            raise ConfigError("hyperopt.task must be 'mlp' or 'quadratic'")
        if not 0.0 < self.hyperopt.init_momentum < 1.0 or not self.hyperopt.init_lr > 0:
            raise ConfigError("hyperopt.init_lr must be > 0 and init_momentum in (0, 1)")
        for name in ("patterns", "edges", "features", "labels"):
            path = getattr(self.data, name)
            if path is not None and not Path(path).exists():
                raise ConfigError(f"data.{name} path does not exist: {path}")
        return self


DEFAULT_FORWARD_STEPS = {"hopfield": 50, "gnn": 100, "gradcheck": 500}


def forward_steps(cfg: ExperimentConfig) -> int:
    """Forward-pass step budget: the configured one or the experiment default."""
    if cfg.forward.max_steps is not None:
        return cfg.forward.max_steps
    return DEFAULT_FORWARD_STEPS.get(cfg.experiment, 100)


def _build(cls, raw: Any, where: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"{where or 'config'} must be a JSON object")
    hints = get_type_hints(cls)
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where or 'config'}: {', '.join(unknown)}")
    kwargs = {}
    for name, value in raw.items():
        hint = hints[name]
        key = f"{where}.{name}" if where else name
        if is_dataclass(hint):
            kwargs[name] = _build(hint, value, key)
        else:
            kwargs[name] = _coerce(value, hint, key)
    return cls(**kwargs)


def _coerce(value, hint, key):
    if value is None:
        if hint in (int, float, bool, str, list):
            raise ConfigError(f"{key} must not be null")
        return None
    if hint is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if hint is int and (isinstance(value, bool) or not isinstance(value, int)):
        raise ConfigError(f"{key} must be an integer")
    if hint is float and not isinstance(value, float):
        raise ConfigError(f"{key} must be a number")
    if hint is bool and not isinstance(value, bool):
        raise ConfigError(f"{key} must be true or false")
    if hint is str and not isinstance(value, str):
        raise ConfigError(f"{key} must be a string")
    if hint is list and not isinstance(value, list):
        raise ConfigError(f"{key} must be a list")
    return value


def config_from_dict(raw: dict) -> ExperimentConfig:
    return _build(ExperimentConfig, raw, "").validate()


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return config_from_dict(raw)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    return asdict(cfg)


def with_overrides(cfg: ExperimentConfig, **overrides) -> ExperimentConfig:
    """Copy of ``cfg`` with top-level fields replaced (``None`` values ignored)."""
    changes = {k: v for k, v in overrides.items() if v is not None}
    return replace(cfg, **changes).validate()
