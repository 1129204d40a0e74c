"""Command-line entry point.

Exit codes everywhere: 0 = pass, 1 = a checked property was violated (or a
demo/expectation did not materialize), 2 = unusable input (bad scenario
file, validation failure, exceeded explorer guards).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from . import checkers, explorer
from .checkers import (CHECKS_BY_NAME, TraceContractError, Verdict,
                       check_progress, check_reading_map, check_persistence,
                       check_replay_fidelity)
from .memory import serialize_trace
from .sched import Scenario, ScenarioError, covering_block_write_plan, run

ENV_SEED = "SWMR_FORGE_SEED"

EXIT_PASS = 0
EXIT_VIOLATION = 1
EXIT_INPUT = 2


def _load_scenario(path: str) -> Scenario:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ScenarioError(f"cannot read scenario {path}: {exc}") from exc
    scenario = Scenario.from_json_obj(obj)
    env_seed = os.environ.get(ENV_SEED)
    if env_seed is not None:
        scenario = replace(scenario, seed=int(env_seed))
        scenario.validate()
    return scenario


def _run_checks(trace, names: list[str], per_op_budget: int) -> Verdict:
    verdict = Verdict()
    for name in names:
        if name == "progress":
            verdict = verdict.merged(
                check_progress(trace, trace.scenario.k, per_op_budget))
        elif name in CHECKS_BY_NAME:
            verdict = verdict.merged(CHECKS_BY_NAME[name](trace))
        else:
            raise ScenarioError(f"unknown check {name!r} (have: "
                                f"{sorted(CHECKS_BY_NAME) + ['progress']})")
    return verdict


def _print_stats(trace) -> None:
    for pid, per in sorted(trace.ops_completed().items()):
        print(f"process {pid}: writes={per['write']} collects={per['collect']}")
    hist = trace.updates_per_register()
    print("updates per register: " + " ".join(f"r{i}={c}" for i, c in enumerate(hist)))
    print(f"outcome: {trace.outcome} events={len(trace.events)}")


def cmd_run(args) -> int:
    scenario = _load_scenario(args.scenario)
    if args.seed is not None:
        scenario = replace(scenario, seed=args.seed)
        scenario.validate()
    trace = run(scenario)
    if args.trace_out:
        Path(args.trace_out).write_bytes(serialize_trace(trace))
    _print_stats(trace)
    names = [s for s in (args.check or "").split(",") if s]
    verdict = _run_checks(trace, names, args.per_op_budget)
    print(json.dumps(verdict.to_json_obj()))
    return EXIT_PASS if verdict.passed else EXIT_VIOLATION


def cmd_check(args) -> int:
    scenario = _load_scenario(args.scenario)
    trace = run(scenario)
    names = [s for s in (args.check or "safety,persistence,budget,waitfree").split(",") if s]
    verdict = _run_checks(trace, names, args.per_op_budget)
    if args.trace:
        data = Path(args.trace).read_bytes()
        verdict = verdict.merged(check_replay_fidelity(trace, data))
    print(json.dumps(verdict.to_json_obj()))
    return EXIT_PASS if verdict.passed else EXIT_VIOLATION


def cmd_explore(args) -> int:
    report = explorer.explore(args.n, args.k, args.m, args.threshold,
                              args.depth, args.workload,
                              override_guards=args.override_guards)
    obj = report.to_json_obj()
    if args.report_out:
        Path(args.report_out).write_text(json.dumps(obj, indent=2) + "\n",
                                         encoding="utf-8")
    print(json.dumps(obj))
    found = bool(report.violations)
    if args.expect_violation:
        return EXIT_PASS if found else EXIT_VIOLATION
    return EXIT_VIOLATION if found else EXIT_PASS


def demo_lost_write(n: int, out_dir: str, m=None, threshold=None) -> int:
    scenario = covering_block_write_plan(n, m=m, threshold=threshold)
    trace = run(scenario)
    persistence = check_persistence(trace)
    reading = check_reading_map(trace)
    l2_hits = [v for v in persistence.violations if v.rule == "persistence_l2"]
    miss_hits = [v for v in reading.violations if v.rule == "reading_map_completeness"]
    demonstrated = bool(l2_hits and miss_hits)

    victim_pos = scenario.scheduler_params["victim_position"]
    victim = scenario.ids[victim_pos]
    others = [p for i, p in enumerate(scenario.ids) if i != victim_pos]
    lines = [
        f"lost-write demonstration: n={n}, registers={scenario.m}, "
        f"completion threshold={scenario.threshold}",
        f"phase 1: processes {others} advance until each is poised to a distinct register",
        f"phase 2: process {victim} runs alone until its write completes",
        "phase 3: the poised processes fire their pending writes (block write)",
        f"phase 4: process {others[0]} collects",
        "",
    ]
    if demonstrated:
        lines.append(f"violation demonstrated: write by {victim} vanished from every "
                     f"register (seq {l2_hits[0].seq}) and the collect omitted it "
                     f"(seq {miss_hits[0].seq})")
    else:
        lines.append("no violation (honest configuration): an uncovered register kept "
                     "the victim's triple and the collect returned it")
    narrative = "\n".join(lines) + "\n"

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "trace.jsonl").write_bytes(serialize_trace(trace))
    (out / "verdict.json").write_text(
        json.dumps(persistence.merged(reading).to_json_obj(), indent=2) + "\n",
        encoding="utf-8")
    (out / "narrative.txt").write_text(narrative, encoding="utf-8")
    print(narrative, end="")
    return EXIT_PASS if demonstrated else EXIT_VIOLATION


def cmd_demo(args) -> int:
    if args.n < 2:
        raise ScenarioError("demo needs n >= 2")
    return demo_lost_write(args.n, args.out_dir, m=args.m, threshold=args.threshold)


def _bench_one(payload) -> dict:
    scenario, seed = payload
    trace = run(replace(scenario, seed=seed))
    ops = trace.ops_completed()
    return {
        "seed": seed,
        "writes": sum(per["write"] for per in ops.values()),
        "collects": sum(per["collect"] for per in ops.values()),
        "events": len(trace.events),
        "updates": trace.updates_per_register(),
    }


def cmd_bench(args) -> int:
    scenario = _load_scenario(args.scenario)
    seeds = [scenario.seed + i for i in range(args.seeds)]
    payloads = [(scenario, s) for s in seeds]
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(_bench_one, payloads))
    else:
        results = [_bench_one(p) for p in payloads]
    results.sort(key=lambda r: r["seed"])
    total_updates = [0] * scenario.m
    for r in results:
        print(f"seed {r['seed']}: writes={r['writes']} collects={r['collects']} "
              f"events={r['events']}")
        for i, c in enumerate(r["updates"]):
            total_updates[i] += c
    print("aggregate updates per register: "
          + " ".join(f"r{i}={c}" for i, c in enumerate(total_updates)))
    return EXIT_PASS


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="swmr-forge")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a scenario, optionally check and dump the trace")
    p.add_argument("--scenario", required=True)
    p.add_argument("--trace-out")
    p.add_argument("--check", default="",
                   help="comma list: safety,persistence,budget,waitfree,progress")
    p.add_argument("--seed", type=int)
    p.add_argument("--per-op-budget", type=int, default=100)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("check", help="re-run a scenario and check it (and a trace file)")
    p.add_argument("--scenario", required=True)
    p.add_argument("--trace")
    p.add_argument("--check", default="")
    p.add_argument("--per-op-budget", type=int, default=100)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("explore", help="exhaustive interleaving exploration")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--threshold", type=int, required=True)
    p.add_argument("--depth", type=int, required=True)
    p.add_argument("--workload", type=int, default=1)
    p.add_argument("--expect-violation", action="store_true")
    p.add_argument("--override-guards", action="store_true")
    p.add_argument("--report-out")
    p.set_defaults(func=cmd_explore)

    p = sub.add_parser("demo-lost-write", help="scripted block-write lost-write demo")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out-dir", default="demo_lost_write_out")
    p.add_argument("--m", type=int)
    p.add_argument("--threshold", type=int)
    p.set_defaults(func=cmd_demo)

    p = sub.add_parser("bench", help="run a scenario across many seeds")
    p.add_argument("--scenario", required=True)
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ScenarioError, TraceContractError,
            explorer.ExplorerGuardError, explorer.ReplayError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
