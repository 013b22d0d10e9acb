"""``rbp <experiment> [--config PATH] [--method M] [--k N] [--seed S] [--out DIR]``

Flags override the matching config fields. Exit status: 0 on success, 1 when
a gradient check or a trial fails, 2 on a configuration, data or I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from ..gradients import METHODS
from .config import EXPERIMENTS, ConfigError, ExperimentConfig, load_config, with_overrides
from .gnn import GraphMismatchError, run_gnn
from .gradcheck import run_gradcheck
from .hopfield import PatternMismatchError, run_hopfield
from .hyperopt import run_hyperopt
from .io import DataFormatError, atomic_write_text, emit_metrics

EXIT_OK, EXIT_FAILED, EXIT_CONFIG = 0, 1, 2
RUNNERS = {"hopfield": run_hopfield, "gnn": run_gnn, "hyperopt": run_hyperopt}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rbp", description="Run a recurrent back-propagation experiment.")
    p.add_argument("experiment", choices=EXPERIMENTS)
    p.add_argument("--config", help="JSON config mirroring ExperimentConfig; defaults apply when omitted")
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--k", type=int, help="truncation steps or iteration budget")
    p.add_argument("--seed", type=int, action="append", help="run this seed (repeatable); replaces config seeds")
    p.add_argument("--workers", type=int, help="worker processes for seed fan-out")
    p.add_argument("--out", help="directory for metrics.csv / summary.json (or report.json for gradcheck)")
    return p


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    return with_overrides(
        cfg,
        experiment=args.experiment,
        method=args.method,
        k=args.k,
        seeds=args.seed,
        workers=args.workers,
        out=args.out,
    )


def _trial_failed(record) -> bool:
    return record.diagnostics.get("status", "ok") != "ok"


def run(cfg: ExperimentConfig, stdout=sys.stdout) -> int:
    if cfg.experiment == "gradcheck":
        report = run_gradcheck(cfg)
        text = json.dumps(report, indent=2, sort_keys=True) + "\n"
        if cfg.out:
            atomic_write_text(Path(cfg.out) / "report.json", text)
        print(f"gradcheck: {report['n_checks'] - report['n_failed']}/{report['n_checks']} checks passed", file=stdout)
        for r in report["results"]:
            if not r["passed"]:
                print(f"  FAIL {r['property']} system={r['system']} error={r.get('error')}", file=stdout)
        return EXIT_OK if report["passed"] else EXIT_FAILED

    records, summary = RUNNERS[cfg.experiment](cfg)
    if cfg.out:
        extra = {k: v for k, v in summary.items() if k != "methods"}
        emit_metrics(records, cfg.out, extra)
    print(json.dumps(summary, indent=2, sort_keys=True), file=stdout)
    failed = [r.seed for r in records if _trial_failed(r)]
    if failed:
        print(f"failed trials (seeds): {failed}", file=stdout)
        return EXIT_FAILED
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        return run(cfg)
    except (ConfigError, DataFormatError, PatternMismatchError, GraphMismatchError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
