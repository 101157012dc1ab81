"""Command-line front end.

    consensustest run --protocol pbft --test drop-prepare-three --iterations 100
    consensustest record --protocol pbft --out run.jsonl
    consensustest replay-check --protocol pbft --trace run.jsonl --trials 100
    consensustest distance --protocol pbft --test reorder-preprepare
    consensustest list
"""
from __future__ import annotations

import argparse
import math
import sys

from .driver import DEFAULT_BUDGET, DEFAULT_DEPTH, DEFAULT_N_BOUND, run_iteration, run_suite, filter_distance
from .dsl import parse_filters
from .errors import ConfigError, HarnessError, IncompleteHistory, NoMatchInNormalRun
from .history import history_of
from .model import ExecutionTrace
from .replay import check_theorem, pick_gate_to_mutate, synthesize
from .testcases import REGISTRY, automata_for


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--protocol", choices=sorted(REGISTRY), default="pbft")
    p.add_argument("--n", type=int, default=None, help="replicas (pbft 4, raft 5)")
    p.add_argument("--f", type=int, default=None, help="tolerated faults (default (n-1)//3 or (n-1)//2)")
    p.add_argument("--seed", type=int, default=0, help="base seed")
    p.add_argument("--budget", type=int, default=DEFAULT_BUDGET, help="product steps per iteration")


def _sizes(args) -> tuple[int, int]:
    n = args.n if args.n is not None else (4 if args.protocol == "pbft" else 5)
    if args.f is not None:
        f = args.f
    else:
        f = (n - 1) // 3 if args.protocol == "pbft" else (n - 1) // 2
    return n, f


def _testcase(ap, args, n, f):
    try:
        factory = REGISTRY[args.protocol][args.test]
    except KeyError:
        ap.error(f"unknown test {args.test!r} for {args.protocol}; try: "
                 + ", ".join(sorted(REGISTRY[args.protocol])))
    tc = factory(n, f)
    tc.step_budget = args.budget
    if getattr(args, "filters", None):
        with open(args.filters) as fh:
            tc.filters = parse_filters(fh.read())
    return tc


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="consensustest", description="Filter-driven testing of toy consensus protocols.")
    sub = ap.add_subparsers(dest="cmd", required=True)

    run = sub.add_parser("run", help="run a test suite and report k/N")
    _common(run)
    run.add_argument("--test", required=True)
    run.add_argument("--iterations", type=int, default=100)
    run.add_argument("--depth", type=int, default=DEFAULT_DEPTH, help="scheduler depth d")
    run.add_argument("--n-bound", type=int, default=DEFAULT_N_BOUND, help="bound on scheduled deliveries")
    run.add_argument("--strategy", choices=("pctcp", "uniform"), default="pctcp")
    run.add_argument("--mode", choices=("inproc", "rpc"), default="inproc")
    run.add_argument("--stub-processes", action="store_true", help="rpc mode: stubs as child processes")
    run.add_argument("--bind", default=None, help="rpc mode: harness address (or $CONSENSUSTEST_BIND)")
    run.add_argument("--report", default="report.jsonl", help="report path, '-' for stdout")
    run.add_argument("--jobs", type=int, default=1)
    run.add_argument("--filters", default=None, help="file of declarative filters replacing the test's own")

    rec = sub.add_parser("record", help="record one iteration's trace")
    _common(rec)
    rec.add_argument("--test", default="no-filters")
    rec.add_argument("--out", required=True)

    rc = sub.add_parser("replay-check", help="synthesize a replay monitor and check the prefix property")
    _common(rc)
    rc.add_argument("--trace", required=True)
    rc.add_argument("--trials", type=int, default=100)
    rc.add_argument("--mutate-gate", action="store_true", help="open one causal gate to show the check has teeth")
    rc.add_argument("--counterexample", default="counterexample.jsonl")
    rc.add_argument("--quiet", action="store_true", help="summary line only")

    dist = sub.add_parser("distance", help="filter distances of a test case")
    _common(dist)
    dist.add_argument("--test", required=True)
    dist.add_argument("--filters", default=None, help="file of declarative filters replacing the test's own")

    sub.add_parser("list", help="list registered test cases")
    return ap


def cmd_run(ap, args) -> int:
    n, f = _sizes(args)
    if args.iterations < 1:
        ap.error("--iterations must be >= 1")
    automata = automata_for(args.protocol, n, f)
    tc = _testcase(ap, args, n, f)
    if args.mode == "rpc":
        from .rpc import StubCluster
        with StubCluster(automata, processes=args.stub_processes, bind=args.bind,
                         protocol=args.protocol, f=f) as cluster:
            report = run_suite(tc, cluster.backend, args.iterations, args.seed,
                               n_bound=args.n_bound, depth=args.depth, strategy=args.strategy)
    else:
        report = run_suite(tc, automata, args.iterations, args.seed, n_bound=args.n_bound,
                           depth=args.depth, strategy=args.strategy, jobs=args.jobs)
    text = report.dumps()
    if args.report == "-":
        sys.stdout.write(text)
    else:
        with open(args.report, "w") as fh:
            fh.write(text)
    print(report.summary)
    needed = math.ceil(tc.threshold * args.iterations)
    return 0 if report.successes >= needed else 1


def cmd_record(ap, args) -> int:
    n, f = _sizes(args)
    automata = automata_for(args.protocol, n, f)
    tc = _testcase(ap, args, n, f)
    out = run_iteration(tc, automata, args.seed)
    with open(args.out, "w") as fh:
        fh.write(out.trace.dumps())
    print(f"recorded {out.events} events ({'complete' if out.complete else 'incomplete'}) to {args.out}")
    return 0 if out.complete else 1


def cmd_replay_check(ap, args) -> int:
    n, f = _sizes(args)
    automata = automata_for(args.protocol, n, f)
    with open(args.trace) as fh:
        trace = ExecutionTrace.loads(fh.read())
    h = history_of(trace)
    try:
        rm = synthesize(h)
    except IncompleteHistory as exc:
        print(f"IncompleteHistory: {exc}", file=sys.stderr)
        return 1
    if args.mutate_gate:
        uid = pick_gate_to_mutate(h)
        print(f"mutated gate: message {uid}")
        rm = rm.mutate(uid)
    verdict = check_theorem(automata, rm, args.trials, args.seed)
    if not args.quiet:
        for r in verdict.results:
            print(f"trial {r.trial}: {'PASS' if r.passed else 'FAIL'} ({r.events} events)")
    print(verdict.summary())
    if not verdict.passed:
        path = verdict.export_counterexample(args.counterexample)
        print(f"counterexample: {path}: {verdict.counterexample.reason}")
        return 1
    return 0


def cmd_distance(ap, args) -> int:
    n, f = _sizes(args)
    automata = automata_for(args.protocol, n, f)
    tc = _testcase(ap, args, n, f)
    try:
        rows = filter_distance(tc, automata, args.seed)
    except NoMatchInNormalRun as exc:
        print(f"NoMatchInNormalRun: {exc}", file=sys.stderr)
        return 1
    for row in rows:
        print(row.line() + (f"  ({row.note})" if row.note else ""))
    return 0


def cmd_list(ap, args) -> int:
    for proto in sorted(REGISTRY):
        for name, factory in sorted(REGISTRY[proto].items()):
            print(f"{proto:<5} {name:<24} {factory().description}")
    return 0


COMMANDS = {"run": cmd_run, "record": cmd_record, "replay-check": cmd_replay_check,
            "distance": cmd_distance, "list": cmd_list}


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return COMMANDS[args.cmd](ap, args)
    except ConfigError as exc:
        ap.error(str(exc))
    except HarnessError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
