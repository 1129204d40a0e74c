"""Bounded exhaustive interleaving exploration for tiny instances.

At every reachable configuration the explorer branches on which process
takes the next atomic step.  A process with write work left advances its
write machine (snapshot-and-arm, or fire); a process whose workload is
finished performs a collect instead, so search paths are plain actor-id
sequences and still exercise the read side.  Collects do not change the
configuration, so their subtrees are not expanded; only their results are
checked.

Per configuration the explorer asserts two instant safety conditions:
every completed write's triple is still present in some register, and a
fired update only ever hits a register its writer was poised to (the
one-step form of uncovered-register stability).  Collect turns assert the
full correspondence between returned triples and closed/open writes.

Configurations are memoized on a canonical key of registers, poised
writes, and all per-process machine state; a configuration is re-expanded
when revisited with more remaining depth than before, so pruning never
hides a violation inside the bound.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from . import checkers
from .algo import PHASE_IDLE
from .core import ProcessId
from .memory import Trace, TripleRegistry
from .sched import Scenario, SimDriver, run, workload_value

GUARD_MAX_N = 3
GUARD_MAX_DEPTH = 20


class ExplorerGuardError(ValueError):
    """Instance exceeds the tractability guards and no override was given."""


class ReplayError(ValueError):
    """A reported path is not applicable to the current algorithm."""


@dataclass
class ExploreViolation:
    path: list
    rule: str
    seq: int


@dataclass
class ExploreReport:
    params: dict
    states: int = 0
    nodes: int = 0
    max_depth: int = 0
    violations: list = field(default_factory=list)
    truncated: bool = False

    @property
    def passed(self) -> bool:
        return not self.violations

    def to_json_obj(self) -> dict:
        return {
            "params": self.params,
            "states": self.states,
            "nodes": self.nodes,
            "max_depth": self.max_depth,
            "violations": [{"path": v.path, "rule": v.rule, "seq": v.seq}
                           for v in self.violations],
            "truncated": self.truncated,
        }


def _script_scenario(n: int, k: int, m: int, threshold: int,
                     workload_len: int, actors: list) -> Scenario:
    return Scenario(n=n, k=k, m=m, threshold=threshold,
                    scheduler_kind="script",
                    scheduler_params={"actors": list(actors)},
                    crashes={}, workload_len=workload_len,
                    seed=0, budget=len(actors) + 1)


def replay(path: list, *, n: int, k: int, m: int, threshold: int,
           workload_len: int) -> Trace:
    """Reconstruct the full trace of an explored choice sequence."""
    scenario = _script_scenario(n, k, m, threshold, workload_len, path)
    try:
        trace = run(scenario)
    except Exception as exc:
        raise ReplayError(f"path not applicable: {exc}") from exc
    if len([e for e in trace.events if e.kind in checkers.TURN_KINDS]) != len(path):
        raise ReplayError("path not applicable: run ended before consuming the path")
    return trace


def _config_key(driver: SimDriver) -> tuple:
    regs = tuple(r.bits for r in driver.mem.registers)
    pend = tuple(sorted((pid, pw.index, pw.content.bits)
                        for pid, pw in driver.mem.pending.items()))
    ws = tuple(
        (w.phase, w.view_bits, w.op_counter, w.write_pos, w.write_pos_max,
         tuple(sorted(w.active)),
         w.current_bit if w.phase != PHASE_IDLE else None,
         None if w.held_snap is None else tuple(r.bits for r in w.held_snap))
        for w in driver.writers)
    return (regs, pend, ws)


def explore(n: int, k: int, m: int, threshold: int, depth: int,
            workload_len: int = 1, override_guards: bool = False,
            max_violations: int = 50) -> ExploreReport:
    """Enumerate every schedule of global atomic steps up to `depth`."""
    if not override_guards and (n > GUARD_MAX_N or depth > GUARD_MAX_DEPTH):
        raise ExplorerGuardError(
            f"n={n}, depth={depth} exceeds guards (n <= {GUARD_MAX_N}, "
            f"depth <= {GUARD_MAX_DEPTH}); pass override_guards to force")
    scenario = _script_scenario(n, k, m, threshold, workload_len, [])
    scenario.validate()
    registry = TripleRegistry()
    registry.preload(scenario.ids, workload_len, workload_value)
    root = SimDriver(scenario, record=False, registry=registry)

    report = ExploreReport(params={"n": n, "k": k, "m": m, "threshold": threshold,
                                   "depth": depth, "workload_len": workload_len})
    memo: dict = {}
    flagged: set = set()
    raw: list[tuple[list, str]] = []

    def flag(key: tuple, rule: str, path: list) -> None:
        if (key, rule) in flagged:
            return
        flagged.add((key, rule))
        if len(raw) < max_violations:
            raw.append((list(path), rule))
        else:
            report.truncated = True

    def instant_l2(driver: SimDriver, key: tuple, path: list) -> None:
        required = 0
        for pos in range(n):
            c = driver.writers[pos].op_counter
            if c:
                required |= ((1 << c) - 1) << (pos * workload_len)
        if not required:
            return
        union = 0
        for reg in driver.mem.registers:
            union |= reg.bits
        if required & ~union:
            flag(key, "persistence_l2", path)

    def instant_pi(driver: SimDriver, values: dict, key: tuple, path: list) -> None:
        for pos in range(n):
            w = driver.writers[pos]
            pid = scenario.ids[pos]
            if w.op_counter >= 1 and pid not in values:
                flag(key, "reading_map_completeness", path)
                return
            t = values.get(pid)
            if t is None:
                continue
            fresh = (t.counter == w.op_counter - 1 or
                     (w.phase != PHASE_IDLE and t.counter == w.op_counter))
            if not fresh:
                flag(key, "reading_map_freshness", path)
                return

    def dfs(driver: SimDriver, used: int, path: list) -> None:
        report.nodes += 1
        if used > report.max_depth:
            report.max_depth = used
        key = _config_key(driver)
        instant_l2(driver, key, path)
        remaining = depth - used
        if memo.get(key, -1) >= remaining:
            return
        memo[key] = remaining
        if remaining == 0:
            return
        for pos in range(n):
            pid = scenario.ids[pos]
            child = driver.fork()
            if child.eligible(pos):
                pre = child.mem.registers
                outcome = child.advance_turn(pos)
                if outcome is not None:
                    # one-step stability: only the armed index may change
                    for i in range(m):
                        if i != outcome.index and child.mem.registers[i] is not pre[i]:
                            flag(key, "persistence_l1", path + [pid])
                dfs(child, used + 1, path + [pid])
            else:
                values = child.collect_turn(pos)
                instant_pi(child, values, key, path + [pid])
                # collect leaves the configuration unchanged: no recursion

    dfs(root, 0, [])
    report.states = len(memo)
    report.violations = [_resolve(path, rule, n=n, k=k, m=m, threshold=threshold,
                                  workload_len=workload_len)
                         for path, rule in raw]
    report.violations.sort(key=lambda v: (len(v.path), v.path))
    return report


def _resolve(path: list, rule_hint: str, *, n: int, k: int, m: int,
             threshold: int, workload_len: int) -> ExploreViolation:
    """Replay a flagged path through the offline checkers so the reported
    rule and seq are exactly what an independent check of the replayed
    trace produces."""
    trace = replay(path, n=n, k=k, m=m, threshold=threshold,
                   workload_len=workload_len)
    verdict = checkers.check_persistence(trace).merged(
        checkers.check_reading_map(trace))
    family = rule_hint.split("_")[0]
    for v in sorted(verdict.violations, key=lambda v: v.seq):
        if v.rule.startswith(family):
            return ExploreViolation(list(path), v.rule, v.seq)
    if verdict.violations:
        v = min(verdict.violations, key=lambda v: v.seq)
        return ExploreViolation(list(path), v.rule, v.seq)
    return ExploreViolation(list(path), rule_hint + "_unconfirmed", -1)
