"""Command-line front end.

Heavy imports happen inside each subcommand so that PRUNE_THREADS can pin
the BLAS thread pool before numpy first loads.  Supported environment
variables:

    PRUNE_THREADS        int, caps BLAS/OpenMP threads for this process
    PRUNE_SEED_OVERRIDE  int, replaces the seed found in any run config
"""

from __future__ import annotations

import argparse
import json
import os
import sys


def _pin_threads() -> None:
    n = os.environ.get("PRUNE_THREADS")
    if n is None:
        return
    if not n.isdigit() or int(n) < 1:
        raise SystemExit(f"error: PRUNE_THREADS must be a positive integer, got {n!r}")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "VECLIB_MAXIMUM_THREADS", "NUMEXPR_NUM_THREADS"):
        os.environ[var] = n


def _run_one_config(path: str) -> dict:
    # module-level so worker processes can pickle it
    from .config import load_config
    from .experiment import run_experiment

    return run_experiment(load_config(path), verbose=False)


def _cmd_run(args) -> int:
    from .config import load_config
    from .errors import ConfigError
    from .experiment import run_experiment

    if len(args.configs) == 1:
        cfg = load_config(args.configs[0])
        out_dir = args.out or cfg.out_dir
        summary = run_experiment(cfg, out_dir=out_dir, verbose=not args.quiet)
        print(f"[{summary['status']}] test accuracy {summary['test_accuracy']:.4f}, "
              f"artifacts in {out_dir}")
        return 0

    if args.out:
        raise ConfigError("--out only applies to a single config; "
                          "multi-config runs use each config's out_dir")
    out_dirs = [load_config(p).out_dir for p in args.configs]
    if len(set(out_dirs)) != len(out_dirs):
        raise ConfigError("configs share an out_dir; every run needs its own")
    if args.jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            summaries = list(pool.map(_run_one_config, args.configs))
    else:
        summaries = [_run_one_config(p) for p in args.configs]
    for path, out_dir, summary in zip(args.configs, out_dirs, summaries):
        print(f"[{summary['status']}] {path}: test accuracy "
              f"{summary['test_accuracy']:.4f}, artifacts in {out_dir}")
    return 0


def _cmd_compare(args) -> int:
    from .experiment import compare_runs

    print(compare_runs(args.run_dirs))
    return 0


def _cmd_bench(args) -> int:
    from .bench import (GemmWorkload, bench_workload, format_report,
                        write_bench_csv)
    from .errors import ConfigError
    from .groups import GroupType

    with open(args.config) as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise ConfigError(f"{args.config}: top level must be a JSON object")
    known = {"workloads", "mode", "sparsities", "repeats", "seed", "out"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown bench config keys: {sorted(unknown)}")
    mode = raw.get("mode", "row")
    if mode not in ("row", "column"):
        raise ConfigError(f"mode: expected row or column, got {mode!r}")
    gtype = GroupType(mode)
    sparsities = raw.get("sparsities", [0.0, 0.25, 0.5, 0.75])
    repeats = int(raw.get("repeats", 50))
    seed = int(raw.get("seed", 0))
    out = raw.get("out", "bench.csv")
    workloads = raw.get("workloads")
    if not workloads:
        raise ConfigError("bench config needs a non-empty workloads list")
    results = []
    for i, w in enumerate(workloads):
        need = {"n_filters", "patch_len", "n_patches"}
        missing = need - set(w)
        if missing:
            raise ConfigError(f"workloads[{i}]: missing {sorted(missing)}")
        work = GemmWorkload(
            layer_id=str(w.get("layer_id", f"gemm{i}")),
            n_filters=int(w["n_filters"]),
            patch_len=int(w["patch_len"]),
            n_patches=int(w["n_patches"]),
        )
        results.extend(bench_workload(work, gtype, sparsities, repeats, seed))
    write_bench_csv(results, out)
    print(format_report(results))
    print(f"wrote {out}")
    return 0


def _cmd_theorem(args) -> int:
    import numpy as np

    from .theorem import (dlambda_direct, dlambda_implicit, standard_families,
                          sweep_lambda)

    cases = standard_families()
    if args.family:
        cases = [c for c in cases if args.family in c.loss.name]
        if not cases:
            print(f"error: no family matches {args.family!r}", file=sys.stderr)
            return 2
    rows = []
    all_ok = True
    print(f"{'family':<26} {'side':<9} {'points':>6} {'max route diff':>15} "
          f"{'|w| shrinks':>12}")
    for case in cases:
        trace = sweep_lambda(case.loss, np.array(case.lambdas), case.lo, case.hi)
        diffs = []
        for lam, w in zip(trace.lambdas, trace.omegas):
            d1 = dlambda_direct(case.loss, w)
            d2 = dlambda_implicit(case.loss, w, lam)
            diffs.append(abs(d1 - d2))
            slope = case.loss.df(w) + lam * w
            rows.append((case.loss.name, trace.side, lam, w, slope,
                         trace.curvatures[len(diffs) - 1], d1, d2))
        mags = np.abs(trace.omegas)
        shrinking = bool(np.all(np.diff(mags) < 0)) if len(trace) > 1 else False
        max_diff = max(diffs) if diffs else float("nan")
        ok = shrinking and len(trace) >= 2 and max_diff < 1e-8
        all_ok = all_ok and ok
        print(f"{case.loss.name:<26} {trace.side:<9} {len(trace):>6} "
              f"{max_diff:>15.3e} {'yes' if shrinking else 'NO':>12}")
    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write("family,side,lambda,omega,y_prime,y_double_prime,"
                     "dlambda_direct,dlambda_implicit\n")
            for r in rows:
                fh.write(f"{r[0]},{r[1]}," + ",".join(repr(v) for v in r[2:]) + "\n")
        print(f"wrote {args.csv}")
    return 0 if all_ok else 1


def _cmd_gradcheck(args) -> int:
    import numpy as np

    from .config import load_config
    from .data import make_synthetic
    from .experiment import build_network
    from .nn.gradcheck import grad_check

    cfg = load_config(args.config)
    net = build_network(cfg, dtype=np.float64)
    x, y = make_synthetic(args.batch, cfg.n_classes, cfg.input_shape,
                          cfg.noise, cfg.resolved_data_seed())
    x = x[: args.batch].astype(np.float64)
    y = y[: args.batch]
    report = grad_check(net, x, y)
    for name in sorted(report.per_layer):
        print(f"{name:<12} max rel err {report.per_layer[name]:.3e}")
    ok = report.max_rel_error < args.tol
    print(f"{'PASS' if ok else 'FAIL'}: {report.n_checked} parameters, "
          f"max rel err {report.max_rel_error:.3e} (tol {args.tol:g})")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="prune",
        description="structured pruning lab: train, prune, compact, measure",
    )
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run pruning experiments from JSON configs")
    run.add_argument("configs", nargs="+")
    run.add_argument("--out", help="output directory, single config only "
                                   "(default: out_dir from config)")
    run.add_argument("--jobs", type=int, default=1,
                     help="worker processes for multi-config runs (default 1)")
    run.add_argument("--quiet", action="store_true", help="suppress progress lines")
    run.set_defaults(fn=_cmd_run)

    comp = sub.add_parser("compare", help="CSV comparison of finished runs")
    comp.add_argument("run_dirs", nargs="+")
    comp.set_defaults(fn=_cmd_compare)

    bench = sub.add_parser("bench", help="time dense vs compact GEMMs")
    bench.add_argument("config")
    bench.set_defaults(fn=_cmd_bench)

    theo = sub.add_parser("theorem", help="trace penalized minima as the factor grows")
    theo.add_argument("--family", help="only families whose name contains this string")
    theo.add_argument("--csv", help="write per-point data to this path")
    theo.set_defaults(fn=_cmd_theorem)

    gc = sub.add_parser("gradcheck", help="finite-difference check of the backward pass")
    gc.add_argument("config")
    gc.add_argument("--tol", type=float, default=1e-6)
    gc.add_argument("--batch", type=int, default=8)
    gc.set_defaults(fn=_cmd_gradcheck)
    return p


def main(argv=None) -> int:
    _pin_threads()
    args = build_parser().parse_args(argv)
    from .errors import PruneLabError

    try:
        return args.fn(args)
    except PruneLabError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
