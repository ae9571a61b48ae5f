"""Command line: bench, sweep, plot and verify."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from nvtraverse.baselines import PERSIST_MODES
from nvtraverse.injector import KNOWN_SURVIVORS, MUTATIONS, PersistencePolicy, check_protocols


def _policy(args) -> PersistencePolicy:
    policy = PersistencePolicy(ensure_reachable=args.ensure_reachable)
    if getattr(args, "mutation", None):
        policy = policy.mutated(args.mutation)
    return policy


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--structure", choices=("list", "hash"), default="list")
    p.add_argument("--persist", choices=PERSIST_MODES, default="nvtraverse")
    p.add_argument("--ensure-reachable", default="field", help="'field' or 'path:k'")
    p.add_argument("--buckets", type=int, default=None)


def _workload_args(p: argparse.ArgumentParser) -> None:
    _common(p)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--range", dest="key_range", type=int, default=1024)
    p.add_argument("--mix", default="10:10:80", help="insert:delete:lookup percentages")
    p.add_argument("--ops", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", choices=("controlled", "free"), default="controlled")


def _spec(args):
    from nvtraverse.harness.workload import WorkloadSpec

    kwargs = dict(
        structure=args.structure,
        persist=args.persist,
        threads=args.threads,
        key_range=args.key_range,
        mix=WorkloadSpec.parse_mix(args.mix),
        ops=args.ops,
        seed=args.seed,
        mode=args.mode,
        policy=_policy(args),
    )
    if args.buckets is not None:
        kwargs["buckets"] = args.buckets
    return WorkloadSpec(**kwargs)


def cmd_bench(args) -> int:
    from nvtraverse.harness.sweep import SweepRow, write_csv
    from nvtraverse.harness.workload import execute
    from nvtraverse.pmem import format_trace

    tracing = bool(args.trace or args.check_protocols)
    report, mem = execute(_spec(args), trace=tracing)
    print(report.to_json() if args.json else report.summary())
    if args.csv:
        write_csv([SweepRow.from_report("size", args.key_range, report)], args.csv)
    if args.trace:
        Path(args.trace).write_text(format_trace(mem.trace))
    if args.check_protocols:
        if args.persist != "nvtraverse":
            print("--check-protocols applies to nvtraverse only", file=sys.stderr)
            return 2
        bad = check_protocols(mem.trace)
        for v in bad[:20]:
            print(f"protocol violation: seq {v.seq} thread {v.thread}: {v.rule}", file=sys.stderr)
        if bad:
            return 1
        print("protocol check: clean")
    return 0


def cmd_sweep(args) -> int:
    from nvtraverse.harness.plotting import plot
    from nvtraverse.harness.sweep import sweep, write_csv

    defaults = {
        "size": [256, 512, 1024, 2048, 4096, 8192],
        "threads": [1, 2, 4, 8],
        "update": [0, 20, 50, 100],
    }
    values = [int(v) for v in args.values.split(",")] if args.values else defaults[args.axis]
    persists = args.persists.split(",") if args.persists else PERSIST_MODES
    rows = sweep(args.axis, values, _spec(args), persists)
    out = write_csv(rows, args.out)
    print(f"wrote {out}")
    for r in rows:
        print(f"  {r.axis}={r.value:<6} {r.persist:<12} flushes/op {r.flushes_per_op:10.3f}  fences/op {r.fences_per_op:10.3f}")
    if not args.no_plot:
        png = plot(out, args.plot or out.with_suffix(".png"))
        print(f"wrote {png}")
    return 0


def cmd_plot(args) -> int:
    from nvtraverse.harness.plotting import plot

    print(f"wrote {plot(args.inp, args.out)}")
    return 0


def cmd_verify(args) -> int:
    from nvtraverse.verifier.explorer import ExplorationBudget, ExplorationConfig, explore, sample

    config = ExplorationConfig(
        structure=args.structure,
        persist=args.persist,
        policy=_policy(args),
        keys=tuple(range(1, args.keys + 1)),
        threads=args.threads,
        ops_per_thread=args.ops,
        buckets=args.buckets or 2,
        eviction=args.eviction,
        stale_flush=args.stale_flush,
        recovery=args.recovery,
    )
    if args.samples:
        res = sample(config, args.samples, args.seed)
        print(f"sampled {res.samples} runs in {res.elapsed:.1f}s: {'PASS' if res.ok else 'FAIL'}")
        cx = res.counterexamples[0] if res.counterexamples else None
    else:
        budget = ExplorationBudget.parse(args.budget) if args.budget else ExplorationBudget()
        res = explore(config, budget)
        s = res.stats
        print(
            f"{res.verdict}: {s.programs} programs, {s.states} states, {s.crash_states} crash states, "
            f"{s.crash_images} crash images, {s.recoveries} recoveries in {s.elapsed:.1f}s"
        )
        cx = res.counterexample
    if cx is not None:
        print(f"counterexample: {cx.reason}")
        print(f"  program {cx.program}")
        print("  history:")
        for ev in cx.history:
            print("    " + ev.line())
        if args.out:
            print(f"  written to {cx.write(args.out)}")
        return 1
    if args.mutation in KNOWN_SURVIVORS:
        print(f"note: {args.mutation} is a known survivor: {KNOWN_SURVIVORS[args.mutation]}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nvtraverse", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bench", help="run one workload and report counts")
    _workload_args(p)
    p.add_argument("--csv", help="also write the point as a CSV row")
    p.add_argument("--trace", help="write the instruction trace here")
    p.add_argument("--check-protocols", action="store_true", help="validate flush/fence placement in the trace")
    p.add_argument("--json", action="store_true", help="print the full report as JSON")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("sweep", help="sweep one axis for every persist mode, write CSV and a plot")
    _workload_args(p)
    p.add_argument("--axis", choices=("size", "threads", "update"), required=True)
    p.add_argument("--values", help="comma-separated axis values")
    p.add_argument("--persists", help="comma-separated persist modes (default: all)")
    p.add_argument("--out", required=True, help="CSV path")
    p.add_argument("--plot", help="figure path (default: CSV path with .png)")
    p.add_argument("--no-plot", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("plot", help="plot a sweep CSV")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True, help="png or svg path")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("verify", help="explore schedules and crashes, check durable linearizability")
    _common(p)
    p.add_argument("--threads", type=int, default=2)
    p.add_argument("--ops", type=int, default=2, help="operations per thread")
    p.add_argument("--keys", type=int, default=2, help="keys 1..K")
    p.add_argument("--budget", help="e.g. crash_points=each-step,resolutions=exhaustive,max_states=100000")
    p.add_argument("--samples", type=int, default=0, help="random sampling instead of exhaustive search")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eviction", default="none", help="none | adversarial")
    p.add_argument("--stale-flush", choices=("invalidate", "persist-flushed"), default="invalidate")
    p.add_argument("--recovery", default="serial", help="'serial' or 'interleaved:n' (n schedules per crash image)")
    p.add_argument("--mutation", choices=sorted(MUTATIONS))
    p.add_argument("--out", help="directory for counterexample files")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
