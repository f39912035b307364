"""End-to-end runs: prune while training, retrain survivors, compact, report.

A run has three phases.  During pruning, every iteration does
forward/backward, ticks the schedule (which may adjust decay factors and
zero out dead groups and their biases), then applies the SGD step with the
schedule's decay and masks.  Once every scheduled layer reaches its target
the masks freeze, every decay factor drops to zero, and retraining lets the
survivors recover.  Finally the masked network is compacted, checked for
output equivalence, and serialized.

Hitting the iteration cap before every layer reaches its target is a result
("incomplete"), not an exception: the record and summary are still written
so the run can be inspected.

All artifacts are byte-deterministic for a fixed config and seed: floats are
written with repr (shortest round-trip form), dict keys are sorted, and no
timestamps or host details appear in any output file.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os

import numpy as np

from .compaction import build_compact, equivalence_check, save_compact
from .config import ExperimentConfig, resolve_ratios
from .data import BatchStream, load_records, make_synthetic
from .errors import ComparisonError, FormatError
from .groups import GroupType, weight_matrix
from .nn.layers import Conv2D
from .nn.network import Network, NetworkSpec, SgdConfig
from .scheduler import REACHED, PruningScheduler

RECORD_NAME = "run_record.csv"
EVENTS_NAME = "events.jsonl"
SUMMARY_NAME = "summary.json"
MODEL_NAME = "compact_model.bin"

_BATCH_SEED_OFFSET = 1000003  # keep init and batch-order streams independent


def build_network(cfg: ExperimentConfig, dtype=np.float32) -> Network:
    spec = NetworkSpec(input_shape=cfg.input_shape, layers=cfg.layers)
    return Network.build(spec, seed=cfg.seed, dtype=dtype)


def load_dataset(cfg: ExperimentConfig):
    """(x_train, y_train, x_test, y_test), deterministic for a given config."""
    if cfg.data == "records":
        x, y = load_records(cfg.data_path, center=cfg.center_channels)
        n_train = int(0.8 * len(x))
        return x[:n_train], y[:n_train], x[n_train:], y[n_train:]
    per = cfg.n_per_class + cfg.n_test_per_class
    x, y = make_synthetic(per, cfg.n_classes, cfg.input_shape, cfg.noise,
                          cfg.resolved_data_seed())
    train_idx, test_idx = [], []
    for c in range(cfg.n_classes):
        idx = np.flatnonzero(y == c)
        train_idx.append(idx[: cfg.n_per_class])
        test_idx.append(idx[cfg.n_per_class :])
    train_idx = np.concatenate(train_idx)
    test_idx = np.concatenate(test_idx)
    return x[train_idx], y[train_idx], x[test_idx], y[test_idx]


def accuracy(net: Network, x: np.ndarray, y: np.ndarray, batch: int = 256) -> float:
    hits = 0
    for i in range(0, len(x), batch):
        hits += int((net.predict(x[i : i + batch]) == y[i : i + batch]).sum())
    return hits / len(x)


def _penalty_terms(net: Network, sched: PruningScheduler, weight_decay: float) -> float:
    """0.5*wd*||w||^2 plus 0.5*sum_g lamb_g*||w_g||^2, weights only."""
    by_name = {l.name: l.params()["weights"] for l in net.param_layers()}
    total = 0.0
    for w in by_name.values():
        total += 0.5 * weight_decay * float((w.astype(np.float64) ** 2).sum())
    for name, ls in sched.layers.items():
        w2d = weight_matrix(by_name[name]).astype(np.float64)
        axis = 1 if ls.gtype is GroupType.ROW else 0
        sq = (w2d**2).sum(axis=axis)
        total += 0.5 * float(np.dot(ls.lamb, sq))
    return total


def config_fingerprint(cfg: ExperimentConfig, ratios: dict[str, float]) -> str:
    """Hash of everything two comparable runs must share (not mode or seed)."""
    basis = {
        "input_shape": list(cfg.input_shape),
        "layers": cfg.layers,
        "group_type": cfg.group_type,
        "data": cfg.data,
        "data_path": cfg.data_path,
        "n_per_class": cfg.n_per_class,
        "n_test_per_class": cfg.n_test_per_class,
        "n_classes": cfg.n_classes,
        "noise": cfg.noise,
        "targets": {k: ratios[k] for k in sorted(ratios)},
    }
    blob = json.dumps(basis, sort_keys=True).encode()
    return hashlib.blake2b(blob, digest_size=12).hexdigest()


class _RecordWriter:
    """CSV rows: iteration, prediction loss, full objective, then per-layer
    sparsity and per-layer factor stats.  repr() formatting round-trips."""

    def __init__(self, path: str, layer_names: list[str]):
        self.fh = open(path, "w", newline="")
        self.layer_names = layer_names
        cols = ["iteration", "loss_data", "loss_total"]
        cols += [f"sparsity_{n}" for n in layer_names]
        for n in layer_names:
            cols += [f"lambda_min_{n}", f"lambda_mean_{n}", f"lambda_max_{n}"]
        self.fh.write(",".join(cols) + "\n")

    def row(self, it: int, loss_data: float, loss_total: float,
            sparsities: dict[str, float],
            lam_stats: dict[str, tuple[float, float, float]]):
        parts = [str(it), repr(loss_data), repr(loss_total)]
        parts += [repr(sparsities[n]) for n in self.layer_names]
        for n in self.layer_names:
            parts += [repr(v) for v in lam_stats[n]]
        self.fh.write(",".join(parts) + "\n")

    def close(self):
        self.fh.close()


def run_experiment(cfg: ExperimentConfig, out_dir: str | None = None,
                   verbose: bool = False, return_state: bool = False):
    out_dir = out_dir or cfg.out_dir
    os.makedirs(out_dir, exist_ok=True)
    log = print if verbose else (lambda *a, **k: None)

    net = build_network(cfg)
    x_train, y_train, x_test, y_test = load_dataset(cfg)
    stream = BatchStream(x_train, y_train, cfg.batch_size, cfg.seed + _BATCH_SEED_OFFSET)
    gtype = GroupType(cfg.group_type)
    default_prunable = [l.name for l in net.layers if isinstance(l, Conv2D)]
    ratios = resolve_ratios(cfg, net.layer_flops(), default_prunable)
    sched = PruningScheduler(
        net, ratios, gtype, cfg.mode,
        penalty_cap=cfg.resolved_penalty_cap() if cfg.mode == "increg" else None,
        lamb_const=cfg.lamb_const if cfg.mode == "constant" else None,
        threshold=cfg.prune_threshold,
    )
    sgd = SgdConfig(lr=cfg.lr, weight_decay=cfg.weight_decay)
    layer_names = sorted(ratios)
    writer = _RecordWriter(os.path.join(out_dir, RECORD_NAME), layer_names)
    events_fh = open(os.path.join(out_dir, EVENTS_NAME), "w")

    def emit(ev_iteration: int, kind: str, layer=None, data=None):
        rec = {"iteration": ev_iteration, "kind": kind, "layer": layer,
               "data": data or {}}
        events_fh.write(json.dumps(rec, sort_keys=True) + "\n")

    log(f"pruning: mode={cfg.mode} groups={gtype.value} layers={layer_names}")
    it = -1
    prune_iters = 0
    for it in range(cfg.max_prune_iterations):
        xb, yb = stream.next_batch()
        loss_data, _ = net.loss(xb, yb)
        loss_total = loss_data + _penalty_terms(net, sched, cfg.weight_decay)
        net.backward()
        if it % cfg.update_interval == 0:
            for ev in sched.tick(it):
                emit(ev.iteration, ev.kind, ev.layer, ev.data)
        net.sgd_step(sgd, sched.extra_decay(), sched.masks(), sched.bias_masks())
        writer.row(it, loss_data, loss_total, sched.sparsities(), sched.lambda_stats())
        if sched.all_reached:
            prune_iters = it + 1
            break
    else:
        prune_iters = cfg.max_prune_iterations

    status = "completed" if sched.all_reached else "incomplete"
    log(f"pruning {status} after {prune_iters} iterations")
    acc_pre_retrain = accuracy(net, x_test, y_test)

    if status == "completed":
        masks, bias_masks = sched.finalize_for_retraining()
        emit(it, "phase", None, {"phase": "retrain"})
        lr = cfg.retrain_lr if cfg.retrain_lr is not None else cfg.lr
        for rt in range(cfg.retrain_iterations):
            it += 1
            if cfg.retrain_lr_step and rt > 0 and rt % cfg.retrain_lr_step == 0:
                lr *= cfg.retrain_lr_decay
            xb, yb = stream.next_batch()
            loss_data, _ = net.loss(xb, yb)
            loss_total = loss_data + _penalty_terms(net, sched, cfg.weight_decay)
            net.backward()
            net.sgd_step(SgdConfig(lr=lr, weight_decay=cfg.weight_decay),
                         None, masks, bias_masks)
            writer.row(it, loss_data, loss_total, sched.sparsities(), sched.lambda_stats())
    writer.close()
    events_fh.close()

    test_acc = accuracy(net, x_test, y_test)
    train_acc = accuracy(net, x_train, y_train)
    log(f"accuracy: pre-retrain={acc_pre_retrain:.4f} train={train_acc:.4f} "
        f"test={test_acc:.4f}")

    summary = {
        "name": cfg.name,
        "mode": cfg.mode,
        "group_type": cfg.group_type,
        "seed": cfg.seed,
        "status": status,
        "fingerprint": config_fingerprint(cfg, ratios),
        "prune_iterations": prune_iters,
        "retrain_iterations": cfg.retrain_iterations if status == "completed" else 0,
        "test_accuracy_pre_retrain": acc_pre_retrain,
        "train_accuracy": train_acc,
        "test_accuracy": test_acc,
        "sparsities": {k: v for k, v in sorted(sched.sparsities().items())},
        "targets": {k: v for k, v in sorted(ratios.items())},
        "lambda_digest": sched.lambda_digest(),
        "params_total": net.param_count(),
    }
    if status == "incomplete":
        summary["unfinished_layers"] = sorted(
            n for n, s in sched.layers.items() if s.phase != REACHED
        )
    if status == "completed":
        compact, plan = build_compact(net, sched.keep_map(), gtype)
        n_check = min(100, len(x_test))
        diff = equivalence_check(net, compact, x_test[:n_check])
        save_compact(compact, os.path.join(out_dir, MODEL_NAME))
        summary["params_compact"] = compact.param_count()
        summary["compact_max_diff"] = diff
        summary["compact_accuracy"] = accuracy(compact, x_test, y_test)
        log(f"compacted {summary['params_total']} -> {summary['params_compact']} params, "
            f"max output diff {diff:.2e}")

    with open(os.path.join(out_dir, SUMMARY_NAME), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if return_state:
        state = {"net": net, "keep_map": sched.keep_map(), "gtype": gtype,
                 "cfg": cfg, "x_test": x_test, "y_test": y_test}
        return summary, state
    return summary


# -- reading artifacts back ---------------------------------------------------


def read_run_record(path: str) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
    if not rows:
        raise FormatError(f"{path}: empty run record")
    out: dict[str, np.ndarray] = {}
    for col in rows[0]:
        out[col] = np.array([float(r[col]) for r in rows])
    return out


def read_events(path: str) -> list[dict]:
    events = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                events.append(json.loads(line))
    return events


def compare_runs(run_dirs: list[str]) -> str:
    """CSV comparison of runs sharing one network/dataset/target setup."""
    summaries = []
    for d in run_dirs:
        with open(os.path.join(d, SUMMARY_NAME)) as fh:
            summaries.append((d, json.load(fh)))
    prints = {s.get("fingerprint") for _, s in summaries}
    if len(prints) > 1:
        detail = ", ".join(f"{d}={s.get('fingerprint')}" for d, s in summaries)
        raise ComparisonError(f"runs use different network/data/target setups: {detail}")
    lines = ["name,mode,seed,status,sparsity,accuracy_pre_retrain,accuracy_post_retrain"]
    for d, s in summaries:
        spars = s.get("sparsities", {})
        overall = float(np.mean(list(spars.values()))) if spars else 0.0
        lines.append(",".join([
            str(s.get("name", os.path.basename(d))),
            str(s.get("mode", "?")),
            str(s.get("seed", "?")),
            str(s.get("status", "?")),
            repr(overall),
            repr(s.get("test_accuracy_pre_retrain", float("nan"))),
            repr(s.get("test_accuracy", float("nan"))),
        ]))
    return "\n".join(lines)
