"""End-to-end run behavior: artifacts, determinism, and run comparison.

Heavy convergence runs live in the acceptance suite; everything here uses a
micro network so the whole module stays under a few seconds.
"""

import filecmp
import json
import os

import numpy as np
import pytest

from prunelab.config import config_from_dict
from prunelab.errors import ComparisonError, FormatError
from prunelab.experiment import (
    EVENTS_NAME,
    MODEL_NAME,
    RECORD_NAME,
    SUMMARY_NAME,
    accuracy,
    build_network,
    compare_runs,
    config_fingerprint,
    load_dataset,
    read_events,
    read_run_record,
    run_experiment,
)

MICRO_LAYERS = [
    {"kind": "conv", "out_channels": 4, "kernel": 3},
    {"kind": "relu"},
    {"kind": "dense", "out_features": 3},
]


def micro_cfg(out_dir, **overrides):
    base = dict(
        name="micro",
        seed=0,
        mode="oneshot",
        group_type="row",
        input_shape=[1, 6, 6],
        layers=[dict(d) for d in MICRO_LAYERS],
        n_per_class=8,
        n_test_per_class=4,
        n_classes=3,
        noise=0.5,
        target_sparsity=0.5,
        batch_size=16,
        lr=0.05,
        max_prune_iterations=3,
        retrain_iterations=30,
        out_dir=str(out_dir),
    )
    base.update(overrides)
    return config_from_dict(base)


@pytest.fixture(scope="module")
def oneshot_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("oneshot")
    cfg = micro_cfg(out / "run")
    summary, state = run_experiment(cfg, return_state=True)
    return cfg, summary, state


def test_oneshot_completes_with_exact_sparsity(oneshot_run):
    cfg, summary, _ = oneshot_run
    assert summary["status"] == "completed"
    assert summary["prune_iterations"] == 1  # everything removed at the first tick
    assert summary["retrain_iterations"] == 30
    assert summary["sparsities"] == {"conv1": 0.5}
    assert summary["targets"] == {"conv1": 0.5}


def test_all_artifacts_written(oneshot_run):
    cfg, _, _ = oneshot_run
    for name in (RECORD_NAME, EVENTS_NAME, SUMMARY_NAME, MODEL_NAME):
        assert os.path.exists(os.path.join(cfg.out_dir, name)), name
    with open(os.path.join(cfg.out_dir, SUMMARY_NAME)) as fh:
        on_disk = json.load(fh)
    assert on_disk["status"] == "completed"


def test_compact_summary_fields(oneshot_run):
    _, summary, _ = oneshot_run
    assert summary["params_compact"] < summary["params_total"]
    assert summary["compact_max_diff"] <= 1e-5
    assert summary["compact_accuracy"] == summary["test_accuracy"]


def test_run_record_contents(oneshot_run):
    cfg, _, _ = oneshot_run
    rec = read_run_record(os.path.join(cfg.out_dir, RECORD_NAME))
    np.testing.assert_array_equal(rec["iteration"], np.arange(31))
    # tick happens before the row is written, so sparsity is 0.5 from row 0
    np.testing.assert_array_equal(rec["sparsity_conv1"], np.full(31, 0.5))
    for stat in ("lambda_min_conv1", "lambda_mean_conv1", "lambda_max_conv1"):
        np.testing.assert_array_equal(rec[stat], np.zeros(31))
    assert np.all(rec["loss_total"] >= rec["loss_data"])
    assert np.all(np.isfinite(rec["loss_data"]))


def test_event_stream_order_and_payload(oneshot_run):
    cfg, _, _ = oneshot_run
    events = read_events(os.path.join(cfg.out_dir, EVENTS_NAME))
    assert [e["kind"] for e in events] == ["prune", "reached", "all_reached", "phase"]
    assert [e["layer"] for e in events] == ["conv1", "conv1", None, None]
    assert all(e["iteration"] == 0 for e in events)
    key = lambda e: (e["iteration"], e["layer"] is None, e["layer"] or "")
    assert events == sorted(events, key=key)
    prune, reached = events[0], events[1]
    assert len(prune["data"]["groups"]) == 2
    assert reached["data"]["pruned"] == reached["data"]["target"] == 2
    assert events[2]["data"]["layers"] == ["conv1"]
    assert events[3]["data"] == {"phase": "retrain"}


def test_pruned_groups_stay_zero_through_retrain(oneshot_run):
    _, _, state = oneshot_run
    keep = state["keep_map"]["conv1"]
    assert int(keep.sum()) == 2
    conv = next(l for l in state["net"].layers if l.name == "conv1")
    w = conv.params()["weights"]
    b = conv.params()["bias"]
    dead = ~keep
    assert np.all(w[dead] == 0.0)
    assert np.all(b[dead] == 0.0)
    assert np.any(w[keep] != 0.0)


def test_incomplete_run_shape(tmp_path):
    cfg = micro_cfg(tmp_path / "inc", mode="increg", max_prune_iterations=25,
                    penalty_cap=1e-4)
    summary = run_experiment(cfg)
    assert summary["status"] == "incomplete"
    assert summary["unfinished_layers"] == ["conv1"]
    assert summary["retrain_iterations"] == 0
    assert "params_compact" not in summary
    assert not os.path.exists(os.path.join(cfg.out_dir, MODEL_NAME))
    rec = read_run_record(os.path.join(cfg.out_dir, RECORD_NAME))
    assert len(rec["iteration"]) == 25


def test_equal_seed_reruns_are_byte_identical(tmp_path):
    a = micro_cfg(tmp_path / "a", seed=11)
    b = micro_cfg(tmp_path / "b", seed=11)
    run_experiment(a)
    run_experiment(b)
    for name in (RECORD_NAME, EVENTS_NAME, SUMMARY_NAME):
        assert filecmp.cmp(os.path.join(a.out_dir, name),
                           os.path.join(b.out_dir, name), shallow=False), name


def test_compare_runs_table_and_mismatch(tmp_path):
    d0, d1 = str(tmp_path / "s0"), str(tmp_path / "s1")
    run_experiment(micro_cfg(d0, name="s0", seed=0))
    run_experiment(micro_cfg(d1, name="s1", seed=1))
    table = compare_runs([d0, d1]).splitlines()
    assert table[0] == ("name,mode,seed,status,sparsity,"
                        "accuracy_pre_retrain,accuracy_post_retrain")
    assert table[1].startswith("s0,oneshot,0,completed,0.5,")
    assert table[2].startswith("s1,oneshot,1,completed,0.5,")

    d2 = str(tmp_path / "other")
    run_experiment(micro_cfg(d2, name="other", noise=0.9))
    with pytest.raises(ComparisonError, match="different"):
        compare_runs([d0, d2])


def test_record_monotonicity(tmp_path):
    cfg = micro_cfg(tmp_path / "mono", mode="increg", max_prune_iterations=40,
                    penalty_cap=0.05, weight_decay=0.0)
    run_experiment(cfg)
    rec = read_run_record(os.path.join(cfg.out_dir, RECORD_NAME))
    assert np.all(np.diff(rec["iteration"]) > 0)
    assert np.all(np.diff(rec["sparsity_conv1"]) >= 0)
    assert np.all(rec["lambda_min_conv1"] >= 0.0)
    assert np.all(rec["loss_total"] >= rec["loss_data"])


def test_plain_training_learns(tmp_path):
    # constant mode with a zero factor is ordinary SGD; nothing ever dies,
    # but the net should fit the easy synthetic set
    cfg = micro_cfg(tmp_path / "plain", mode="constant", lamb_const=0.0,
                    noise=0.2, n_per_class=10, lr=0.1,
                    max_prune_iterations=400, retrain_iterations=0)
    summary = run_experiment(cfg)
    assert summary["status"] == "incomplete"
    assert summary["train_accuracy"] >= 0.9
    assert summary["sparsities"] == {"conv1": 0.0}


def test_update_interval_gates_factor_updates(tmp_path):
    cfg = micro_cfg(tmp_path / "gate", mode="increg", update_interval=5,
                    max_prune_iterations=10, penalty_cap=0.01,
                    weight_decay=0.0, lr=0.001)
    run_experiment(cfg)
    rec = read_run_record(os.path.join(cfg.out_dir, RECORD_NAME))
    mean = rec["lambda_mean_conv1"]
    assert np.all(mean[0:5] == mean[0])
    assert np.all(mean[5:10] == mean[5])
    assert mean[5] > mean[4]  # factors move only at tick iterations


def test_read_run_record_rejects_empty(tmp_path):
    header_only = tmp_path / "h.csv"
    header_only.write_text("iteration,loss_data,loss_total\n")
    with pytest.raises(FormatError, match="empty"):
        read_run_record(str(header_only))
    empty = tmp_path / "e.csv"
    empty.write_text("")
    with pytest.raises(FormatError, match="empty"):
        read_run_record(str(empty))


def test_load_dataset_stratified_counts():
    cfg = micro_cfg("unused")
    x_train, y_train, x_test, y_test = load_dataset(cfg)
    np.testing.assert_array_equal(np.bincount(y_train), [8, 8, 8])
    np.testing.assert_array_equal(np.bincount(y_test), [4, 4, 4])
    assert x_train.shape == (24, 1, 6, 6)
    assert x_test.shape == (12, 1, 6, 6)


def test_fingerprint_ignores_mode_and_seed():
    ratios = {"conv1": 0.5}
    base = micro_cfg("unused")
    same_mode = micro_cfg("unused", mode="increg", seed=99, lr=0.5)
    other_data = micro_cfg("unused", noise=0.9)
    assert config_fingerprint(base, ratios) == config_fingerprint(same_mode, ratios)
    assert config_fingerprint(base, ratios) != config_fingerprint(other_data, ratios)
    assert config_fingerprint(base, ratios) != config_fingerprint(base, {"conv1": 0.25})


def test_accuracy_batching_matches_full_pass():
    cfg = micro_cfg("unused")
    net = build_network(cfg)
    rng = np.random.default_rng(5)
    x = rng.standard_normal((10, 1, 6, 6)).astype(np.float32)
    y = rng.integers(0, 3, size=10)
    full = float((net.predict(x) == y).mean())
    assert accuracy(net, x, y, batch=3) == full


def test_retrain_lr_schedule_smoke(tmp_path):
    cfg = micro_cfg(tmp_path / "sched", retrain_lr=0.02, retrain_lr_step=10,
                    retrain_lr_decay=0.5)
    summary = run_experiment(cfg)
    assert summary["status"] == "completed"
    rec = read_run_record(os.path.join(cfg.out_dir, RECORD_NAME))
    assert np.all(np.isfinite(rec["loss_data"]))
