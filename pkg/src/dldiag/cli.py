"""Command-line front end: synth, sample, eval, and bench subcommands.

Exit codes: 0 success, 1 runtime error, 2 usage error.  All outputs are
UTF-8 CSV; result files are written atomically and rows are sorted
canonically, so identical invocations produce identical bytes (timing
measurements excepted).  DLDG_THREADS caps evaluation parallelism.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .artifacts import ArtifactError, load_run, write_run
from .queries import FullResults, TimingRecord, evaluate
from .samplers import (
    CLUSTERED_STRATEGIES,
    STRATEGIES,
    SampleSpec,
    fit_memberships,
    load_sample,
    make_sample,
    save_sample,
    weighted_sample,
)
from .synth import SynthSpec, generate

DEFAULT_FRACTIONS = (0.05, 0.1, 0.2, 0.4, 0.8)
DEFAULT_KS = (10, 25, 50, 100)
J_SWEEP = (0.0, 0.25, 0.5, 0.75, 1.0)
WEIGHTED_SEEDS = 10


def _fraction_arg(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not 0.0 < value <= 1.0:
        raise argparse.ArgumentTypeError(f"fraction must be in (0, 1], got {value}")
    return value


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.split(",") if x)


def _float_list(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split(",") if x)


def _atomic_write(path: Path, writer) -> None:
    tmp = path.with_name(path.name + ".tmp")
    writer(tmp)
    os.replace(tmp, path)


def _load_run_arg(arg: str):
    path = Path(arg)
    return load_run(path / "manifest.json" if path.is_dir() else path)


def cmd_synth(args) -> int:
    spec = SynthSpec(
        class_count=args.classes,
        item_count=args.items,
        latent_dim=args.dims,
        separation=args.sep,
        layers=args.layers,
        label_noise=args.noise,
        noise_mode=args.noise_mode,
        mean_layout=args.mean_layout,
        pair_distance=args.pair_distance,
        seed=args.seed,
    )
    manifest = write_run(generate(spec), Path(args.out))
    print(manifest)
    return 0


def cmd_sample(args) -> int:
    run = _load_run_arg(args.run)
    if args.strategy == "eb_tree":
        if args.fraction is not None:
            print("warning: eb_tree sample size is emergent; --fraction ignored",
                  file=sys.stderr)
        fraction = 1.0
    else:
        if args.fraction is None:
            print(f"error: --fraction is required for strategy {args.strategy}",
                  file=sys.stderr)
            raise SystemExit(2)
        fraction = args.fraction
    spec = SampleSpec(
        strategy=args.strategy,
        fraction=fraction,
        j=args.j,
        seed=args.seed,
        grid_dims=args.grid_dims,
        grid_bins=args.grid_bins,
        vas_epsilon=args.vas_epsilon,
    )
    start = time.perf_counter()
    sample = make_sample(run, spec, model_seed=args.model_seed)
    seconds = time.perf_counter() - start
    save_sample(sample, Path(args.out), seconds=seconds)
    print(f"{spec.strategy},{spec.fraction},{seconds}")
    return 0


def cmd_eval(args) -> int:
    run = _load_run_arg(args.run)
    samples, timings = [], []
    for path in args.sample:
        sample, seconds = load_sample(Path(path))
        samples.append(sample)
        if seconds is not None:
            timings.append(
                TimingRecord(sample.spec.strategy, sample.spec.fraction, seconds)
            )
    report = evaluate(run, samples, ks=args.ks, rank_by=args.rank_by,
                      timings=timings)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _atomic_write(out / "cells.csv", report.write_cells_csv)
    _atomic_write(out / "aggregate.csv", report.write_aggregates_csv)
    _atomic_write(out / "timing.csv", report.write_timings_csv)
    print(out / "aggregate.csv")
    return 0


def bench_run(
    run,
    out_dir: Path,
    fractions=DEFAULT_FRACTIONS,
    ks=DEFAULT_KS,
    seed: int = 0,
    j: float = 0.7,
    j_sweep_fraction: float = 0.05,
    weighted_model: str = "max_margin",
) -> Path:
    """Full factorial sweep: strategies x fractions, a tuning-factor sweep
    for the clustered strategies, and a 10-seed average for the weighted
    strategy.

    Emits bench.csv (strategy,fraction,j,query_set,k,accuracy), timing.csv
    (strategy,fraction,seconds; model fitting included), and summary.txt.
    Latent models are fitted once per strategy and reused across fractions;
    each timing row reports fit time plus sampling time.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    workers = max(1, int(os.environ.get("DLDG_THREADS", "1")))
    full = FullResults(run, ks)

    tables, fit_seconds = {}, {}
    for strategy in CLUSTERED_STRATEGIES:
        start = time.perf_counter()
        tables[strategy] = fit_memberships(run, strategy, model_seed=seed)
        fit_seconds[strategy] = time.perf_counter() - start
    fit_seconds["weighted"] = fit_seconds[weighted_model]

    jobs = []  # (strategy, fraction, j_label, samples, seconds or None)
    for strategy in STRATEGIES:
        if strategy == "eb_tree":
            start = time.perf_counter()
            sample = make_sample(run, SampleSpec(strategy=strategy, seed=seed))
            jobs.append((strategy, 1.0, "", [sample],
                         time.perf_counter() - start))
            continue
        for fraction in fractions:
            if strategy == "weighted":
                table = tables[weighted_model]
                start = time.perf_counter()
                group = [
                    weighted_sample(
                        run, table,
                        SampleSpec(strategy="weighted", fraction=fraction,
                                   j=j, seed=s),
                    )
                    for s in range(WEIGHTED_SEEDS)
                ]
                seconds = (time.perf_counter() - start) / WEIGHTED_SEEDS
                jobs.append((strategy, fraction, "", group,
                             seconds + fit_seconds["weighted"]))
                continue
            clustered = strategy in CLUSTERED_STRATEGIES
            spec = SampleSpec(strategy=strategy, fraction=fraction, j=j, seed=seed)
            start = time.perf_counter()
            sample = make_sample(run, spec, table=tables.get(strategy))
            seconds = time.perf_counter() - start + fit_seconds.get(strategy, 0.0)
            jobs.append((strategy, fraction, repr(j) if clustered else "",
                         [sample], seconds))
    for strategy in CLUSTERED_STRATEGIES:
        for jv in J_SWEEP:
            spec = SampleSpec(strategy=strategy, fraction=j_sweep_fraction,
                              j=jv, seed=seed)
            sample = make_sample(run, spec, table=tables[strategy])
            jobs.append((strategy, j_sweep_fraction, repr(jv), [sample], None))

    def run_job(job):
        _strategy, _fraction, _j_label, group, _seconds = job
        return job, evaluate(run, group, ks=ks, full=full).aggregates()

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_job, jobs))
    else:
        results = [run_job(job) for job in jobs]

    bench_rows, timing_rows = [], []
    for (strategy, fraction, j_label, _group, seconds), aggs in results:
        for a in aggs:
            bench_rows.append((strategy, fraction, j_label, a.query_set,
                               "" if a.k is None else a.k, a.accuracy))
        if seconds is not None:
            timing_rows.append(TimingRecord(strategy, fraction, seconds))
    bench_rows.sort(key=lambda r: (r[0], r[1], r[2], r[3],
                                   -1 if r[4] == "" else r[4]))

    def write_bench(path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["strategy", "fraction", "j", "query_set", "k", "accuracy"])
            for name, fraction, j_label, qs, k, acc in bench_rows:
                w.writerow([name, repr(fraction), j_label, qs, k, repr(acc)])

    def write_timing(path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["strategy", "fraction", "seconds"])
            for t in sorted(timing_rows, key=lambda t: (t.strategy, t.fraction)):
                w.writerow([t.strategy, repr(t.fraction), repr(t.seconds)])

    _atomic_write(out_dir / "bench.csv", write_bench)
    _atomic_write(out_dir / "timing.csv", write_timing)
    summary = _summary_text(bench_rows, timing_rows, fractions, ks,
                            j_sweep_fraction, j)
    _atomic_write(out_dir / "summary.txt", lambda p: p.write_text(summary))
    return out_dir / "bench.csv"


def _summary_text(bench_rows, timing_rows, fractions, ks, j_sweep_fraction, j) -> str:
    def lookup(name, fraction, j_label, qs, k):
        for r in bench_rows:
            if r[:5] == (name, fraction, j_label, qs, k):
                return r[5]
        return None

    lines = []
    first = fractions[0]
    lines.append(f"sample creation time (seconds, ascending; fraction={first},"
                 " eb_tree emergent)")
    rows = [t for t in timing_rows if t.fraction == first or t.strategy == "eb_tree"]
    for t in sorted(rows, key=lambda t: t.seconds):
        lines.append(f"  {t.strategy:<15} {t.seconds:.6f}")
    lines.append("")
    names = sorted({r[0] for r in bench_rows})
    for qs, k in (("S1", ks[0]), ("S2", ""), ("S3", "")):
        title = f"{qs} aggregate" + (f" (k={k})" if qs == "S1" else "")
        lines.append(title)
        lines.append("  strategy        " + " ".join(f"{f:>8}" for f in fractions))
        for name in names:
            j_label = repr(j) if name in CLUSTERED_STRATEGIES else ""
            vals = []
            for f in fractions:
                fr = 1.0 if name == "eb_tree" else f
                v = lookup(name, fr, "" if name == "eb_tree" else j_label, qs, k)
                vals.append(f"{v:8.4f}" if v is not None else "       -")
            lines.append(f"  {name:<15} " + " ".join(vals))
        lines.append("")
    lines.append(f"tuning-factor sweep at fraction {j_sweep_fraction} (S1, k={ks[0]})")
    lines.append("  strategy        " + " ".join(f"{jv:>8}" for jv in J_SWEEP))
    for name in CLUSTERED_STRATEGIES:
        vals = []
        for jv in J_SWEEP:
            v = lookup(name, j_sweep_fraction, repr(jv), "S1", ks[0])
            vals.append(f"{v:8.4f}" if v is not None else "       -")
        lines.append(f"  {name:<15} " + " ".join(vals))
    lines.append("")
    return "\n".join(lines) + "\n"


def cmd_bench(args) -> int:
    run = _load_run_arg(args.run)
    path = bench_run(
        run,
        Path(args.out_dir),
        fractions=args.fractions,
        ks=args.ks,
        seed=args.seed,
        j=args.j,
        j_sweep_fraction=args.j_sweep_fraction,
        weighted_model=args.weighted_model,
    )
    print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dldiag",
        description="sampling engine and benchmark harness for DL model diagnosis",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic model run")
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--items", type=int, required=True)
    p.add_argument("--dims", type=int, required=True)
    p.add_argument("--sep", type=float, required=True)
    p.add_argument("--layers", type=_int_list, required=True,
                   help="comma-separated hidden layer widths, e.g. 128,64")
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--noise-mode", choices=["boundary", "uniform"],
                   default="boundary")
    p.add_argument("--mean-layout", choices=["random", "paired"],
                   default="random")
    p.add_argument("--pair-distance", type=float, default=4.0)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("sample", help="build one sample from a run")
    p.add_argument("--run", required=True)
    p.add_argument("--strategy", choices=STRATEGIES, required=True)
    p.add_argument("--fraction", type=_fraction_arg, default=None)
    p.add_argument("--j", type=float, default=0.7)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--model-seed", type=int, default=0)
    p.add_argument("--grid-dims", type=int, default=5)
    p.add_argument("--grid-bins", type=int, default=2)
    p.add_argument("--vas-epsilon", default="auto")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", help="score samples against full-data queries")
    p.add_argument("--run", required=True)
    p.add_argument("--sample", action="append", required=True,
                   help="sample CSV (repeatable)")
    p.add_argument("--ks", type=_int_list, default=(10,))
    p.add_argument("--rank-by", choices=["mean", "max"], default="mean")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="full sweep over strategies and fractions")
    p.add_argument("--run", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--fractions", type=_float_list, default=DEFAULT_FRACTIONS)
    p.add_argument("--ks", type=_int_list, default=DEFAULT_KS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--j", type=float, default=0.7)
    p.add_argument("--j-sweep-fraction", type=_fraction_arg, default=0.05)
    p.add_argument("--weighted-model", choices=CLUSTERED_STRATEGIES,
                   default="max_margin")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ArtifactError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except np.linalg.LinAlgError as exc:
        print(f"error: linear algebra failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
