"""GEMM timing: does structural removal actually buy wall-clock speed.

A conv layer's forward pass is one GEMM: (filters x patch_len) times
(patch_len x patches).  Row removal shrinks the left matrix's rows; column
removal shrinks the shared inner dimension but must first gather the
surviving patch rows, and that gather belongs inside the measured time (the
compact model pays it on every inference).  An exclusive measurement without
the gather is also recorded for reporting, but the headline number includes
it.

Timings are medians over many repeats; short kernels are looped so each
sample is long enough for the clock to resolve.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .groups import GroupType
from .scheduler import prune_target


@dataclass(frozen=True)
class GemmWorkload:
    """Shapes of one conv-as-GEMM benchmark case."""

    layer_id: str
    n_filters: int
    patch_len: int
    n_patches: int


@dataclass
class BenchResult:
    layer_id: str
    mode: str
    sparsity: float
    dense_ms: float
    compact_ms: float
    speedup: float
    dense_ms_mean: float = 0.0
    compact_ms_mean: float = 0.0
    compact_ms_exclusive: float = 0.0


def time_callable(fn, repeats: int = 50, target_ms: float = 2.0) -> tuple[float, float]:
    """(median_ms, mean_ms) per call; loops fast kernels to beat clock noise."""
    fn()
    fn()
    t0 = time.perf_counter()
    fn()
    once = time.perf_counter() - t0
    inner = max(1, int(np.ceil(target_ms / 1000.0 / max(once, 1e-9))))
    samples = np.empty(repeats)
    for i in range(repeats):
        t0 = time.perf_counter_ns()
        for _ in range(inner):
            fn()
        samples[i] = (time.perf_counter_ns() - t0) / 1e6 / inner
    return float(np.median(samples)), float(samples.mean())


def bench_workload(
    work: GemmWorkload,
    gtype: GroupType,
    sparsities: list[float],
    repeats: int = 50,
    seed: int = 0,
) -> list[BenchResult]:
    """Dense-vs-compact timings for one workload across sparsity levels."""
    if repeats < 1:
        raise ConfigError("repeats must be positive")
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((work.n_filters, work.patch_len)).astype(np.float32)
    x = rng.standard_normal((work.patch_len, work.n_patches)).astype(np.float32)
    dense_med, dense_mean = time_callable(lambda: w @ x, repeats)

    results = []
    for s in sparsities:
        if not 0.0 <= s < 1.0:
            raise ConfigError(f"sparsity must be in [0, 1), got {s}")
        if gtype is GroupType.ROW:
            kept = work.n_filters - prune_target(s, work.n_filters)
            w2 = np.ascontiguousarray(w[:kept])
            med, mean = time_callable(lambda: w2 @ x, repeats)
            excl = med
        else:
            kept = work.patch_len - prune_target(s, work.patch_len)
            idx = np.arange(kept, dtype=np.int64)
            w2 = np.ascontiguousarray(w[:, :kept])
            xk = np.ascontiguousarray(x[:kept])
            med, mean = time_callable(lambda: w2 @ x[idx], repeats)
            excl, _ = time_callable(lambda: w2 @ xk, repeats)
        results.append(BenchResult(
            layer_id=work.layer_id,
            mode=gtype.value,
            sparsity=float(s),
            dense_ms=dense_med,
            compact_ms=med,
            speedup=dense_med / med,
            dense_ms_mean=dense_mean,
            compact_ms_mean=mean,
            compact_ms_exclusive=excl,
        ))
    return results


def write_bench_csv(results: list[BenchResult], path: str) -> None:
    """Six fixed columns; medians, formatted with full float precision."""
    lines = ["layer_id,mode,sparsity,dense_ms,compact_ms,speedup"]
    for r in results:
        lines.append(
            f"{r.layer_id},{r.mode},{r.sparsity!r},{r.dense_ms!r},{r.compact_ms!r},{r.speedup!r}"
        )
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def environment_note() -> str:
    """One line saying what the timings ran on; kept out of the CSV."""
    pinned = os.environ.get("OMP_NUM_THREADS")
    threads = pinned or str(os.cpu_count())
    state = "pinned" if pinned else "unpinned"
    return f"environment: {threads} thread(s) ({state}), numpy {np.__version__}"


def format_report(results: list[BenchResult]) -> str:
    header = (
        f"{'layer':<10} {'mode':<7} {'sparsity':>8} {'dense ms':>10} "
        f"{'compact ms':>11} {'no-gather':>10} {'speedup':>8}"
    )
    rows = [header, "-" * len(header)]
    for r in results:
        rows.append(
            f"{r.layer_id:<10} {r.mode:<7} {r.sparsity:>8.2f} {r.dense_ms:>10.3f} "
            f"{r.compact_ms:>11.3f} {r.compact_ms_exclusive:>10.3f} {r.speedup:>7.2f}x"
        )
    rows.append(environment_note())
    return "\n".join(rows)
