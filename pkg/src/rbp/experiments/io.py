"""File formats: pattern/feature/label CSVs, edge lists, and metric output.

Every writer goes through a temporary file in the target directory followed by
``os.replace``, so a reader never sees a half-written file.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np


class DataFormatError(ValueError):
    def __init__(self, path, line: int | None, message: str):
        where = f"{path}:{line}" if line is not None else str(path)
        super().__init__(f"{where}: {message}")
        self.path = str(path)
        self.line = line


def _data_lines(path):
    """Yield ``(line_number, stripped_text)`` skipping blanks and ``#`` comments."""
    with open(path, encoding="utf-8") as fh:
        for number, raw in enumerate(fh, start=1):
            text = raw.split("#", 1)[0].strip()
            if text:
                yield number, text


def _parse_floats(path, number, text):
    try:
        values = [float(tok) for tok in text.replace(",", " ").split()]
    except ValueError as exc:
        raise DataFormatError(path, number, f"not a number ({exc})") from None
    if not all(math.isfinite(v) for v in values):
        raise DataFormatError(path, number, "non-finite value")
    return values


def read_matrix_csv(path) -> np.ndarray:
    rows = []
    width = None
    for number, text in _data_lines(path):
        values = _parse_floats(path, number, text)
        if width is None:
            width = len(values)
        elif len(values) != width:
            raise DataFormatError(path, number, f"expected {width} values, found {len(values)}")
        rows.append(values)
    if not rows:
        raise DataFormatError(path, None, "file holds no data rows")
    return np.asarray(rows, dtype=np.float64)


def load_patterns(path) -> list[np.ndarray]:
    """One pattern per row, values in [0, 1]."""
    patterns = []
    width = None
    for number, text in _data_lines(path):
        values = _parse_floats(path, number, text)
        if width is None:
            width = len(values)
        elif len(values) != width:
            raise DataFormatError(path, number, f"pattern has {len(values)} values, earlier rows have {width}")
        if min(values) < 0.0 or max(values) > 1.0:
            raise DataFormatError(path, number, "pattern values must lie in [0, 1]")
        patterns.append(np.asarray(values, dtype=np.float64))
    if not patterns:
        raise DataFormatError(path, None, "file holds no patterns")
    return patterns


def default_patterns_path() -> Path:
    """Ten binarized 8x8 handwritten digits (one per class) shipped with the package."""
    return Path(str(resources.files("rbp.experiments") / "data" / "digits8x8.csv"))


@dataclass
class Graph:
    n_nodes: int
    edges: np.ndarray  # (m, 2) src, dst
    features: np.ndarray  # (n, f)
    labels: np.ndarray  # (n,)

    @property
    def n_classes(self) -> int:
        return int(self.labels.max()) + 1 if self.labels.size else 0


def load_edges(path, n_nodes: int, undirected: bool = True) -> np.ndarray:
    """``src dst`` integer pairs; ``undirected`` adds the reverse of every edge."""
    pairs = []
    for number, text in _data_lines(path):
        tokens = text.split()
        if len(tokens) != 2:
            raise DataFormatError(path, number, f"expected 'src dst', found {len(tokens)} fields")
        try:
            src, dst = int(tokens[0]), int(tokens[1])
        except ValueError:
            raise DataFormatError(path, number, "node ids must be integers") from None
        for node in (src, dst):
            if not 0 <= node < n_nodes:
                raise DataFormatError(path, number, f"node id {node} outside [0, {n_nodes})")
        pairs.append((src, dst))
        if undirected and src != dst:
            pairs.append((dst, src))
    edges = np.asarray(sorted(set(pairs)), dtype=np.intp).reshape(-1, 2)
    return edges


def load_labels(path) -> np.ndarray:
    labels = []
    for number, text in _data_lines(path):
        try:
            value = int(text)
        except ValueError:
            raise DataFormatError(path, number, "label must be a single integer") from None
        if value < 0:
            raise DataFormatError(path, number, "labels must be non-negative")
        labels.append(value)
    return np.asarray(labels, dtype=np.intp)


def load_graph(edges_path, features_path, labels_path, undirected: bool = True) -> Graph:
    features = read_matrix_csv(features_path)
    labels = load_labels(labels_path)
    if labels.shape[0] != features.shape[0]:
        raise DataFormatError(
            labels_path, None, f"{labels.shape[0]} labels but {features.shape[0]} feature rows"
        )
    n = features.shape[0]
    edges = load_edges(edges_path, n, undirected=undirected)
    return Graph(n, edges, features, labels)


def write_graph(graph: Graph, directory) -> dict:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {name: directory / f"{name}.{ext}" for name, ext in (("edges", "txt"), ("features", "csv"), ("labels", "csv"))}
    atomic_write_text(paths["edges"], "".join(f"{s} {d}\n" for s, d in graph.edges))
    atomic_write_text(paths["features"], "".join(",".join(repr(float(v)) for v in row) + "\n" for row in graph.features))
    atomic_write_text(paths["labels"], "".join(f"{int(v)}\n" for v in graph.labels))
    return {k: str(v) for k, v in paths.items()}


# -- metrics --------------------------------------------------------------


@dataclass
class TrialRecord:
    """One trial: its loss curve plus everything needed to judge it.

    ``success`` must be recomputable from ``losses`` (see
    :func:`loss_halved`); wall time is kept apart from the
    bit-reproducible outputs.
    """

    seed: int
    method: str
    losses: list
    val_metric: list
    success: bool
    wall_time: float = 0.0
    diagnostics: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, raw: dict) -> "TrialRecord":
        return cls(**raw)


def loss_halved(losses) -> bool:
    """Success rule: the final training loss is below half the initial one."""
    losses = list(losses)
    if len(losses) < 1 or not all(math.isfinite(v) for v in losses):
        return False
    return losses[-1] < 0.5 * losses[0]


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


def summarize(records: list[TrialRecord], extra: dict | None = None) -> dict:
    """Per-method aggregates: mean and std of final loss and final metric, success rate."""
    by_method: dict[str, list[TrialRecord]] = {}
    for r in records:
        by_method.setdefault(r.method, []).append(r)
    out = {}
    for method, rs in sorted(by_method.items()):
        final_loss = np.array([r.losses[-1] if r.losses else np.nan for r in rs], dtype=float)
        final_metric = np.array([r.val_metric[-1] if r.val_metric else np.nan for r in rs], dtype=float)
        out[method] = {
            "n_trials": len(rs),
            "seeds": [r.seed for r in rs],
            "success_rate": float(np.mean([r.success for r in rs])),
            "final_loss_mean": float(np.mean(final_loss)),
            "final_loss_std": float(np.std(final_loss)),
            "final_metric_mean": float(np.mean(final_metric)),
            "final_metric_std": float(np.std(final_metric)),
        }
    summary = {"methods": out}
    if extra:
        summary.update(extra)
    return summary


def emit_metrics(records: list[TrialRecord], directory, extra_summary: dict | None = None) -> dict:
    """Write ``metrics.csv``, ``summary.json`` and ``records.json`` into ``directory``.

    ``metrics.csv`` has one row per trial per step (seed, step, loss,
    val_metric). ``summary.json`` carries the aggregates. Neither contains
    wall time, so identical runs give byte-identical files; ``records.json``
    holds the full records (wall time included) for round-tripping.
    """
    directory = Path(directory)
    lines = ["method,seed,step,loss,val_metric"]
    for r in sorted(records, key=lambda r: (r.method, r.seed)):
        n = max(len(r.losses), len(r.val_metric))
        for step in range(n):
            loss = r.losses[step] if step < len(r.losses) else None
            metric = r.val_metric[step] if step < len(r.val_metric) else None
            lines.append(f"{r.method},{r.seed},{step},{_fmt(loss)},{_fmt(metric)}")
    paths = {
        "metrics": directory / "metrics.csv",
        "summary": directory / "summary.json",
        "records": directory / "records.json",
    }
    atomic_write_text(paths["metrics"], "\n".join(lines) + "\n")
    atomic_write_text(paths["summary"], json.dumps(summarize(records, extra_summary), indent=2, sort_keys=True) + "\n")
    atomic_write_text(paths["records"], json.dumps([r.to_json() for r in records], indent=2, sort_keys=True) + "\n")
    return {k: str(v) for k, v in paths.items()}


def write_states_csv(path, states) -> None:
    """One row per hidden state (e.g. per meta step), for offline trajectory plots."""
    rows = np.atleast_2d(np.asarray(states, dtype=np.float64))
    atomic_write_text(path, "".join(",".join(repr(float(v)) for v in row) + "\n" for row in rows))


def load_records(path) -> list[TrialRecord]:
    with open(path, encoding="utf-8") as fh:
        return [TrialRecord.from_json(r) for r in json.load(fh)]


def load_metrics_csv(path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        for line in fh:
            parts = line.rstrip("\n").split(",")
            row = dict(zip(header, parts))
            rows.append({
                "method": row["method"],
                "seed": int(row["seed"]),
                "step": int(row["step"]),
                "loss": float(row["loss"]) if row["loss"] else None,
                "val_metric": float(row["val_metric"]) if row["val_metric"] else None,
            })
    return rows
