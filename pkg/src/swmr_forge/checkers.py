"""Offline trace oracles.

Every checker consumes a finished in-memory trace (events carry packed
register and poised images) and returns a Verdict: pass iff no violations.
Rules:

  reading_map_*      collect results map to admissible writes: every
                     process that closed a write before the collect's
                     invocation is represented, and each returned triple is
                     the writer's last write closed before the invocation
                     or one concurrent with the collect.
  persistence_l1     a triple present in an uncovered register stays in
                     that register at every later point.
  persistence_l2     once a write returns, its triple is present in some
                     register at every later point.
  budget_cap         no update ever targets an index >= n+k-1.
  budget_gating      an update to index n+t-1 (t >= 1) requires the actor
                     to have observed at least t+1 active processes.
  progress_*         bounded-budget liveness proxies under a verified
                     fairness certificate.
  isomorphism        order-preserving id renaming yields the same trace up
                     to substitution, byte-exact.

Structural problems (non-consecutive seq, unknown actors, missing fairness
certificate) raise TraceContractError instead of producing a Verdict; the
CLI maps that to the input-error exit code.
"""

from __future__ import annotations

from bisect import bisect_left, bisect_right
from dataclasses import dataclass, field
from typing import Optional

from .core import ProcessId, Triple
from .memory import (KIND_CRASH, KIND_OP_BEGIN, KIND_OP_END, KIND_SNAPSHOT,
                     KIND_UPDATE, OP_COLLECT, OP_WRITE, Trace, serialize_trace)

SHARED_STEP_KINDS = (KIND_SNAPSHOT, KIND_UPDATE)
TURN_KINDS = (KIND_SNAPSHOT, KIND_UPDATE, KIND_CRASH)

MAX_VIOLATIONS = 100


class TraceContractError(ValueError):
    """The trace is structurally unusable for checking."""


@dataclass(frozen=True)
class Violation:
    rule: str
    seq: int
    witness: str


@dataclass
class Verdict:
    violations: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.violations

    def add(self, rule: str, seq: int, witness: str) -> None:
        if len(self.violations) < MAX_VIOLATIONS:
            self.violations.append(Violation(rule, seq, witness))

    def to_json_obj(self) -> dict:
        return {"pass": self.passed,
                "violations": [{"rule": v.rule, "seq": v.seq, "witness": v.witness}
                               for v in self.violations]}

    def merged(self, other: "Verdict") -> "Verdict":
        return Verdict(self.violations + other.violations)


@dataclass(frozen=True)
class OpInterval:
    actor: ProcessId
    op: str
    invocation: int
    response: Optional[int]          # None while open at trace end
    triple: Optional[Triple] = None  # writes
    values: Optional[tuple] = None   # collects


def validate_trace(trace: Trace) -> None:
    ids = set(trace.scenario.ids)
    for i, ev in enumerate(trace.events):
        if ev.seq != i:
            raise TraceContractError(f"event {i} has seq {ev.seq}; must be consecutive from 0")
        if ev.actor not in ids:
            raise TraceContractError(f"event {i} names unknown actor {ev.actor}")


def build_intervals(trace: Trace) -> list[OpInterval]:
    """Pair op_begin/op_end events into operation intervals, oldest first."""
    validate_trace(trace)
    open_ops: dict[tuple[ProcessId, str], tuple[int, Optional[Triple]]] = {}
    intervals: list[OpInterval] = []
    for ev in trace.events:
        key = (ev.actor, ev.op)
        if ev.kind == KIND_OP_BEGIN:
            if key in open_ops:
                raise TraceContractError(
                    f"seq {ev.seq}: {ev.actor} begins a {ev.op} with one already open")
            open_ops[key] = (ev.seq, ev.triple)
        elif ev.kind == KIND_OP_END:
            if key not in open_ops:
                raise TraceContractError(
                    f"seq {ev.seq}: {ev.actor} ends a {ev.op} that never began")
            inv, triple = open_ops.pop(key)
            intervals.append(OpInterval(ev.actor, ev.op, inv, ev.seq,
                                        triple=triple, values=ev.values))
    for (actor, op), (inv, triple) in open_ops.items():
        intervals.append(OpInterval(actor, op, inv, None, triple=triple))
    intervals.sort(key=lambda iv: iv.invocation)
    return intervals


def check_reading_map(trace: Trace) -> Verdict:
    """The collect/write correspondence: completeness, freshness, and at
    most one returned value per writer."""
    verdict = Verdict()
    intervals = build_intervals(trace)
    writes = [iv for iv in intervals if iv.op == OP_WRITE]
    collects = [iv for iv in intervals if iv.op == OP_COLLECT and iv.response is not None]

    closed_by_pid: dict[ProcessId, list[tuple[int, int]]] = {}
    write_by_counter: dict[tuple[ProcessId, int], OpInterval] = {}
    for w in writes:
        write_by_counter[(w.actor, w.triple.counter)] = w
        if w.response is not None:
            closed_by_pid.setdefault(w.actor, []).append((w.response, w.triple.counter))
    for lst in closed_by_pid.values():
        lst.sort()

    for c in collects:
        by_writer: dict[ProcessId, Triple] = {}
        for t in c.values or ():
            if t.writer in by_writer:
                verdict.add("reading_map_wellformed", c.response,
                            f"collect by {c.actor} returns two values for writer {t.writer}")
                continue
            by_writer[t.writer] = t

        for pid, closed in closed_by_pid.items():
            idx = bisect_left(closed, (c.invocation, -1))
            if idx == 0:
                continue  # nothing closed strictly before the invocation
            if pid not in by_writer:
                verdict.add("reading_map_completeness", c.response,
                            f"collect by {c.actor} invoked at seq {c.invocation} omits "
                            f"process {pid}, whose write (counter {closed[idx - 1][1]}) "
                            f"closed at seq {closed[idx - 1][0]}")

        for pid, t in by_writer.items():
            closed = closed_by_pid.get(pid, [])
            idx = bisect_left(closed, (c.invocation, -1))
            last_closed = closed[idx - 1][1] if idx else None
            if t.counter == last_closed:
                continue
            w = write_by_counter.get((pid, t.counter))
            if w is not None and w.invocation <= c.response and \
                    (w.response is None or w.response >= c.invocation):
                continue  # concurrent with the collect
            verdict.add("reading_map_freshness", c.response,
                        f"collect by {c.actor} returns counter {t.counter} for writer "
                        f"{pid}; last closed before invocation was {last_closed} and "
                        f"write {t.counter} does not overlap the collect")
    return verdict


def check_persistence(trace: Trace) -> Verdict:
    """Register stability (l1) and completed-write persistence (l2)."""
    validate_trace(trace)
    verdict = Verdict()
    registry = trace.registry
    m = len(trace.final.registers)
    locked = [0] * m
    required = 0
    for ev in trace.events:
        regs = ev.registers_after
        if ev.kind == KIND_OP_END and ev.op == OP_WRITE:
            required |= 1 << registry.bit_of(ev.triple)
        union = 0
        for i in range(m):
            bits = regs[i].bits
            missing = locked[i] & ~bits
            if missing:
                gone = registry.unpack(missing)
                verdict.add("persistence_l1", ev.seq,
                            f"register {i} lost {[tuple(t) for t in gone]} although it "
                            f"held them while uncovered")
                locked[i] &= bits
            union |= bits
        missing = required & ~union
        if missing:
            gone = registry.unpack(missing)
            verdict.add("persistence_l2", ev.seq,
                        f"triples of completed writes absent from every register: "
                        f"{[tuple(t) for t in gone]}")
            required &= union
        covered = {idx for _, idx in ev.poised_after}
        for i in range(m):
            if i not in covered:
                locked[i] |= regs[i].bits
    return verdict


def check_register_budget(trace: Trace, n: int, k: int) -> Verdict:
    verdict = Verdict()
    validate_trace(trace)
    cap = n + k - 1
    for ev in trace.events:
        if ev.kind != KIND_UPDATE:
            continue
        if ev.index >= cap:
            verdict.add("budget_cap", ev.seq,
                        f"{ev.actor} updated register {ev.index}, beyond the "
                        f"n+k-1 = {cap} budget")
        elif ev.index >= n:
            need = ev.index - n + 2
            if ev.active_at_arm < need:
                verdict.add("budget_gating", ev.seq,
                            f"{ev.actor} updated register {ev.index} having observed "
                            f"only {ev.active_at_arm} active processes (needs >= {need})")
    return verdict


def check_collect_waitfree(trace: Trace) -> Verdict:
    """Every collect interval contains exactly one snapshot step."""
    verdict = Verdict()
    validate_trace(trace)
    open_collect: dict[ProcessId, int] = {}
    for ev in trace.events:
        if ev.op != OP_COLLECT:
            continue
        if ev.kind == KIND_OP_BEGIN:
            open_collect[ev.actor] = 0
        elif ev.kind == KIND_SNAPSHOT:
            if ev.actor in open_collect:
                open_collect[ev.actor] += 1
        elif ev.kind == KIND_OP_END:
            count = open_collect.pop(ev.actor, 0)
            if count != 1:
                verdict.add("collect_steps", ev.seq,
                            f"collect by {ev.actor} used {count} snapshot steps")
    return verdict


# --- progress ----------------------------------------------------------------

def _turns(trace: Trace) -> list:
    return [ev for ev in trace.events if ev.kind in TURN_KINDS]


def _fairness_window(trace: Trace) -> int:
    w = trace.scenario.scheduler_params.get("window_w", 4)
    return trace.scenario.n * w


def verify_fairness_certificate(trace: Trace) -> None:
    """Raise unless every scheduled process keeps taking turns regularly.

    A process that takes no turn at all is treated as a non-participant
    (that is what solo and fixed-set schedules look like); every other
    process must, from its first turn until it crashes or exhausts its
    workload, appear at least once in every window of n*W turns."""
    turns = _turns(trace)
    window = _fairness_window(trace)
    scen = trace.scenario
    closed_writes: dict[ProcessId, int] = {pid: 0 for pid in scen.ids}
    until: dict[ProcessId, int] = {pid: len(turns) - 1 for pid in scen.ids}
    positions: dict[ProcessId, list[int]] = {pid: [] for pid in scen.ids}
    ti = -1
    for ev in trace.events:
        if ev.kind in TURN_KINDS:
            ti += 1
            positions[ev.actor].append(ti)
            if ev.kind == KIND_CRASH:
                until[ev.actor] = min(until[ev.actor], ti)
        elif ev.kind == KIND_OP_END and ev.op == OP_WRITE:
            closed_writes[ev.actor] += 1
            if closed_writes[ev.actor] >= scen.workload_len:
                until[ev.actor] = min(until[ev.actor], ti)
    for pid in scen.ids:
        pts = [p for p in positions[pid] if p <= until[pid]]
        if not pts:
            continue
        bounds = pts + [until[pid] + 1]
        for a, b in zip(bounds, bounds[1:]):
            if b - a - 1 >= window:
                raise TraceContractError(
                    f"trace lacks fairness certificate: process {pid} takes no turn "
                    f"in window of {window} turns starting at turn {a + 1}")


def check_progress(trace: Trace, k: int, per_op_budget: int) -> Verdict:
    """Bounded liveness proxies.

    With at most k processes live after the last crash, every live process
    must close each write begun there within `per_op_budget` of its own
    shared steps.  With more than k live, at least k distinct processes
    must close two or more writes.
    """
    verify_fairness_certificate(trace)
    verdict = Verdict()
    intervals = build_intervals(trace)
    last_crash_seq = max((ev.seq for ev in trace.events if ev.kind == KIND_CRASH),
                         default=-1)
    live = {ev.actor for ev in trace.events
            if ev.kind in SHARED_STEP_KINDS and ev.seq > last_crash_seq}

    own_steps: dict[ProcessId, list[int]] = {}
    for ev in trace.events:
        if ev.kind in SHARED_STEP_KINDS:
            own_steps.setdefault(ev.actor, []).append(ev.seq)

    if len(live) <= k:
        end_seq = len(trace.events)
        for iv in intervals:
            if iv.op != OP_WRITE or iv.actor not in live:
                continue
            if iv.invocation <= last_crash_seq:
                continue
            steps = own_steps.get(iv.actor, [])
            lo = bisect_left(steps, iv.invocation)
            hi = bisect_right(steps, iv.response if iv.response is not None else end_seq)
            used = hi - lo
            if iv.response is not None and used > per_op_budget:
                verdict.add("progress_obstruction", iv.response,
                            f"{iv.actor} needed {used} own steps to close write "
                            f"counter {iv.triple.counter} (budget {per_op_budget})")
            elif iv.response is None and used >= per_op_budget:
                verdict.add("progress_obstruction", len(trace.events) - 1,
                            f"{iv.actor} spent {used} own steps without closing write "
                            f"counter {iv.triple.counter} (budget {per_op_budget})")
    else:
        closers: dict[ProcessId, int] = {}
        for iv in intervals:
            if iv.op == OP_WRITE and iv.response is not None and \
                    iv.response > last_crash_seq:
                closers[iv.actor] = closers.get(iv.actor, 0) + 1
        enough = [pid for pid, c in closers.items() if c >= 2]
        if len(enough) < k:
            verdict.add("progress_lockfree", len(trace.events) - 1,
                        f"only {len(enough)} processes closed >= 2 writes "
                        f"({len(live)} live, need {k})")
    return verdict


# --- isomorphism -------------------------------------------------------------

def validate_renaming(ids: tuple, mapping: dict) -> None:
    if set(mapping) != set(ids):
        raise ValueError("renaming domain must be exactly the scenario ids")
    src = sorted(ids)
    dst = [mapping[p] for p in src]
    if any(d < 1 for d in dst):
        raise ValueError("renamed ids must be positive")
    if any(b <= a for a, b in zip(dst, dst[1:])):
        raise ValueError("renaming is not order-preserving")


def check_isomorphism(scenario, mapping: dict) -> Verdict:
    """Run the scenario under original and renamed ids; the traces must be
    byte-identical after substituting the renaming into the original."""
    from .sched import run  # local import: sched pulls in no checker code

    validate_renaming(scenario.ids, mapping)
    verdict = Verdict()
    original = run(scenario)
    renamed = run(scenario.renamed(mapping))
    a = serialize_trace(original, rename=mapping)
    b = serialize_trace(renamed)
    if a != b:
        a_lines = a.decode().splitlines()
        b_lines = b.decode().splitlines()
        seq = next((i for i, (x, y) in enumerate(zip(a_lines, b_lines)) if x != y),
                   min(len(a_lines), len(b_lines)))
        verdict.add("isomorphism", seq,
                    f"renamed run diverges at line {seq}")
    return verdict


def check_replay_fidelity(trace: Trace, data: bytes) -> Verdict:
    """A trace file must match what re-serializing the replayed run yields."""
    verdict = Verdict()
    fresh = serialize_trace(trace)
    if fresh != data:
        a_lines = fresh.decode().splitlines()
        b_lines = data.decode().splitlines()
        seq = next((i for i, (x, y) in enumerate(zip(a_lines, b_lines)) if x != y),
                   min(len(a_lines), len(b_lines)))
        verdict.add("replay_fidelity", seq,
                    f"trace file diverges from deterministic replay at line {seq}")
    return verdict


CHECKS_BY_NAME = {
    "safety": lambda trace: check_reading_map(trace),
    "persistence": lambda trace: check_persistence(trace),
    "budget": lambda trace: check_register_budget(
        trace, trace.scenario.n, trace.scenario.k),
    "waitfree": lambda trace: check_collect_waitfree(trace),
}
