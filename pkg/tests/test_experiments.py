import json
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rbp.experiments.cli import main
from rbp.experiments.config import (
    ConfigError,
    ExperimentConfig,
    config_from_dict,
    config_to_dict,
    load_config,
    with_overrides,
)
from rbp.experiments.gnn import GraphMismatchError, run_gnn_trial, split_nodes, stochastic_block_model
from rbp.experiments.gradcheck import run_gradcheck
from rbp.experiments.hopfield import PatternMismatchError, load_training_patterns, run_hopfield, run_hopfield_trial
from rbp.experiments.hyperopt import run_hyperopt_trial
from rbp.experiments.io import (
    DataFormatError,
    Graph,
    TrialRecord,
    default_patterns_path,
    emit_metrics,
    load_edges,
    load_graph,
    load_metrics_csv,
    load_patterns,
    load_records,
    loss_halved,
    write_graph,
)
from rbp.experiments.runner import map_seeds

# -- config -------------------------------------------------------------------------


def test_defaults_validate():
    cfg = ExperimentConfig().validate()
    assert cfg.k == 20 and cfg.hyperopt.meta_lr == 0.05
    assert config_from_dict(config_to_dict(cfg)) == cfg


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError, match="methdo"):
        config_from_dict({"methdo": "bptt"})
    with pytest.raises(ConfigError, match="hopfield"):
        config_from_dict({"hopfield": {"gama": 0.1}})


@pytest.mark.parametrize(
    "raw",
    [
        {"k": "20"},
        {"k": 0, "method": "neumann-rbp"},
        {"seeds": []},
        {"seeds": [1, 1]},
        {"method": "sgd"},
        {"experiment": "mnist"},
        {"forward": {"tol": 0.0}},
        {"gnn": {"split": [0.5, 0.5, 0.5]}},
        {"hopfield": {"corruption_rate": 2.0}},
        {"data": {"patterns": "/does/not/exist.csv"}},
        {"k": None},
    ],
)
def test_invalid_configs(raw):
    with pytest.raises(ConfigError):
        config_from_dict(raw)


def test_bptt_allows_any_k():
    assert config_from_dict({"method": "bptt", "k": 0}).k == 0


def test_load_config_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(bad)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")


def test_overrides():
    cfg = with_overrides(ExperimentConfig(), method="tbptt", k=None, seeds=[3])
    assert cfg.method == "tbptt" and cfg.k == 20 and cfg.seeds == [3]


# -- data files ---------------------------------------------------------------------------


def test_patterns_two_rows(tmp_path):
    p = tmp_path / "p.csv"
    p.write_text("0,1,0,1\n# comment\n1,1,0.5,0\n")
    pats = load_patterns(p)
    assert len(pats) == 2 and all(x.shape == (4,) for x in pats)


@pytest.mark.parametrize(
    "text,line",
    [("0,1\n0,1,1\n", 2), ("0,1\n0,x\n", 2), ("0,1\n\n0,2\n", 3), ("nan,1\n", 1)],
)
def test_pattern_errors_carry_line_numbers(tmp_path, text, line):
    p = tmp_path / "p.csv"
    p.write_text(text)
    with pytest.raises(DataFormatError) as info:
        load_patterns(p)
    assert info.value.line == line


def test_shipped_patterns():
    pats = np.stack(load_patterns(default_patterns_path()))
    assert pats.shape == (10, 64) and set(np.unique(pats)) <= {0.0, 1.0}


def test_edge_out_of_range(tmp_path):
    p = tmp_path / "edges.txt"
    p.write_text("0 1\n1 2\n2 7\n")
    with pytest.raises(DataFormatError) as info:
        load_edges(p, 3)
    assert info.value.line == 3 and "7" in str(info.value)


def test_edges_undirected_duplicated(tmp_path):
    p = tmp_path / "edges.txt"
    p.write_text("0 1\n1 0\n2 2\n")
    assert load_edges(p, 3).tolist() == [[0, 1], [1, 0], [2, 2]]
    assert load_edges(p, 3, undirected=False).tolist() == [[0, 1], [1, 0], [2, 2]]


def test_graph_round_trip_and_mismatch(tmp_path):
    g = stochastic_block_model([5, 5], 0.5, 0.1, 3, 1.0, seed=0)
    paths = write_graph(g, tmp_path)
    back = load_graph(paths["edges"], paths["features"], paths["labels"])
    assert np.array_equal(back.edges, g.edges) and np.array_equal(back.features, g.features)
    (tmp_path / "labels.csv").write_text("0\n1\n")
    with pytest.raises(DataFormatError):
        load_graph(paths["edges"], paths["features"], paths["labels"])


# -- records and metrics ------------------------------------------------------------------


def _records():
    return [
        TrialRecord(0, "bptt", [4.0, 3.0, 1.5], [0.5, 0.6, 0.9], True, 0.1, {"status": "ok"}),
        TrialRecord(1, "bptt", [4.0, 3.5, 2.5], [0.4, 0.5, 0.5], False, 0.2, {"status": "ok", "x": [1, 2]}),
    ]


def test_emit_then_parse_round_trip(tmp_path):
    recs = _records()
    paths = emit_metrics(recs, tmp_path)
    assert load_records(paths["records"]) == recs
    rows = load_metrics_csv(paths["metrics"])
    assert len(rows) == 6 and rows[2] == {"method": "bptt", "seed": 0, "step": 2, "loss": 1.5, "val_metric": 0.9}
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["methods"]["bptt"]["success_rate"] == 0.5
    assert not list(tmp_path.glob(".*"))  # no temporary files left behind


def test_metric_files_exclude_wall_time(tmp_path):
    a, b = _records(), _records()
    b[0].wall_time = 99.0
    emit_metrics(a, tmp_path / "a")
    emit_metrics(b, tmp_path / "b")
    for name in ("metrics.csv", "summary.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


@given(st.lists(st.floats(0.01, 100.0), min_size=1, max_size=20))
def test_success_is_recomputable(losses):
    assert loss_halved(losses) == (losses[-1] < 0.5 * losses[0])
    assert not loss_halved(losses + [float("nan")])


# -- drivers ---------------------------------------------------------------------------------


def _square(seed, offset):
    return seed * seed + offset


def test_map_seeds_orders_results():
    assert map_seeds(_square, [3, 1, 2], 1, 10) == [19, 11, 14]
    assert map_seeds(_square, [3, 1, 2], 2, 10) == [19, 11, 14]


def _strip(records):
    return [{**r.to_json(), "wall_time": 0.0} for r in records]


def test_parallel_and_serial_records_agree():
    cfg = config_from_dict({"experiment": "hopfield", "seeds": [0, 1], "hopfield": {"train_steps": 2}})
    serial, _ = run_hopfield(cfg)
    parallel, _ = run_hopfield(with_overrides(cfg, workers=2))
    assert _strip(serial) == _strip(parallel)


def test_hopfield_pattern_size_mismatch(tmp_path):
    p = tmp_path / "p.csv"
    p.write_text("0,1,1\n1,0,1\n")
    cfg = config_from_dict({"experiment": "hopfield", "data": {"patterns": str(p)}})
    with pytest.raises(PatternMismatchError):
        load_training_patterns(cfg)


def test_hopfield_zero_corruption_is_clean_recall():
    cfg = config_from_dict({"experiment": "hopfield", "hopfield": {"corruption_rate": 0.0, "train_steps": 10}})
    r = run_hopfield_trial(0, cfg, load_training_patterns(cfg))
    assert r.diagnostics["corrupted_bit_accuracy"] == r.diagnostics["clean_bit_accuracy"]
    assert r.losses[-1] < r.losses[0]
    assert r.success == loss_halved(r.losses)


def test_split_keeps_every_class():
    labels = np.repeat([0, 1, 2], 50)
    for seed in range(10):
        tr, va, te = split_nodes(labels, [0.01, 0.49, 0.5], seed)
        assert set(labels[tr]) == {0, 1, 2}
        assert len(set(tr) | set(va) | set(te)) == 150 and len(tr) + len(va) + len(te) == 150


def test_information_free_graph(tmp_path):
    g = Graph(20, np.zeros((0, 2), dtype=int), np.zeros((20, 3)), np.arange(20) % 2)
    paths = write_graph(g, tmp_path)
    accs = []
    for method in ("neumann-rbp", "tbptt", "bptt"):
        cfg = config_from_dict({"experiment": "gnn", "method": method, "data": paths,
                                "gnn": {"split": [0.2, 0.3, 0.5], "train_steps": 10}})
        r = run_gnn_trial(0, cfg)
        accs.append(r.diagnostics["test_accuracy"])
        assert r.diagnostics["baseline_test_accuracy"] == r.diagnostics["test_accuracy"]
    assert max(accs) - min(accs) == 0.0


def test_graph_files_must_come_together(tmp_path):
    g = Graph(4, np.zeros((0, 2), dtype=int), np.zeros((4, 1)), np.zeros(4, dtype=int))
    paths = write_graph(g, tmp_path)
    cfg = config_from_dict({"experiment": "gnn", "data": {"edges": paths["edges"]}})
    with pytest.raises(GraphMismatchError):
        run_gnn_trial(0, cfg)


def test_label_count_mismatch(tmp_path):
    g = Graph(4, np.zeros((0, 2), dtype=int), np.zeros((4, 1)), np.zeros(4, dtype=int))
    paths = write_graph(g, tmp_path)
    (tmp_path / "labels.csv").write_text("0\n1\n0\n")
    cfg = config_from_dict({"experiment": "gnn", "data": paths})
    assert main(["gnn", "--config", _write_cfg(tmp_path, config_to_dict(cfg))]) == 2


def test_zero_meta_steps_keep_initial_hyperparameters():
    cfg = config_from_dict({"experiment": "hyperopt", "hyperopt": {"meta_steps": 0, "inner_steps": 10}})
    r = run_hyperopt_trial(0, cfg)
    assert r.diagnostics["learning_rates"] == [np.exp(-1.0)] * 6
    assert r.diagnostics["momenta"] == [0.5] * 6
    assert len(r.losses) == 1


def test_hyperopt_divergence_is_a_failed_trial():
    cfg = config_from_dict({"experiment": "hyperopt", "method": "bptt",
                            "hyperopt": {"task": "quadratic", "init_lr": 50.0, "inner_steps": 200, "meta_steps": 2}})
    r = run_hyperopt_trial(0, cfg)
    assert r.diagnostics["status"].startswith("diverged") and not r.success


def test_hyperopt_state_dump(tmp_path):
    cfg = config_from_dict({"experiment": "hyperopt", "method": "bptt", "out": str(tmp_path),
                            "hyperopt": {"task": "quadratic", "inner_steps": 20, "meta_steps": 3, "dump_states": True}})
    run_hyperopt_trial(0, cfg)
    rows = (tmp_path / "states_bptt_seed0.csv").read_text().splitlines()
    assert len(rows) == 4 and len(rows[0].split(",")) == 4


def test_gradcheck_default_passes_and_records_divergence():
    report = run_gradcheck(ExperimentConfig())
    assert report["passed"] and report["n_failed"] == 0
    div = [r for r in report["results"] if r["property"] == "rbp_fails_when_expanding"]
    assert div and div[0]["error_type"] == "RBPConvergenceError"


# -- command line -----------------------------------------------------------------------------


def _write_cfg(tmp_path, raw, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(raw))
    return str(p)


def test_cli_gradcheck_ok(tmp_path, capsys):
    assert main(["gradcheck", "--out", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["passed"] and report["n_checks"] > 0


def test_cli_gradcheck_sign_flip_fails(tmp_path, capsys):
    cfg = _write_cfg(tmp_path, {"gradcheck": {"inject_sign_flip": True}})
    assert main(["gradcheck", "--config", cfg, "--out", str(tmp_path)]) == 1
    assert not json.loads((tmp_path / "report.json").read_text())["passed"]


def test_cli_config_errors(tmp_path, capsys):
    assert main(["hopfield", "--config", str(tmp_path / "missing.json")]) == 2
    assert main(["hopfield", "--config", _write_cfg(tmp_path, {"typo": 1})]) == 2
    assert main(["hopfield", "--k", "0"]) == 2
    with pytest.raises(SystemExit) as info:
        main(["nonsense"])
    assert info.value.code == 2


def test_cli_flags_override_config(tmp_path, capsys):
    cfg = _write_cfg(tmp_path, {"method": "bptt", "seeds": [5, 6], "hopfield": {"train_steps": 2}})
    out = tmp_path / "run"
    assert main(["hopfield", "--config", cfg, "--method", "neumann-rbp", "--k", "7", "--seed", "3", "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["k"] == 7 and list(summary["methods"]) == ["neumann-rbp"]
    assert summary["methods"]["neumann-rbp"]["seeds"] == [3]


def test_cli_runs_are_bit_identical(tmp_path, capsys):
    cfg = _write_cfg(tmp_path, {"seeds": [0, 1], "gnn": {"block_size": 20, "train_steps": 3}})
    for name in ("a", "b"):
        assert main(["gnn", "--config", cfg, "--out", str(tmp_path / name)]) == 0
    for f in ("metrics.csv", "summary.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_cli_failed_trial_exit_code(tmp_path, capsys):
    cfg = _write_cfg(tmp_path, {"method": "bptt", "hyperopt": {"task": "quadratic", "init_lr": 50.0,
                                                              "inner_steps": 200, "meta_steps": 1}})
    assert main(["hyperopt", "--config", cfg]) == 1


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "rbp", "gradcheck", "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "checks passed" in proc.stdout
