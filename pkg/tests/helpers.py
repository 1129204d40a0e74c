"""Shared test utilities: scenario corpus builders, hand-rolled trace
construction, and the canned trace mutations used for checker soundness."""

from __future__ import annotations

import random

from swmr_forge.core import Triple
from swmr_forge.memory import (KIND_OP_BEGIN, KIND_OP_END, KIND_SNAPSHOT,
                               KIND_UPDATE, OP_COLLECT, OP_WRITE, MemoryState,
                               RegContent, StepEvent, Trace, TripleRegistry)
from swmr_forge.sched import Scenario

# frozen fixture: per-op own-step budget for the two-survivor obstruction
# regime (worst observed across the 50-seed corpus was 22)
OBSTRUCTION_PER_OP_BUDGET = 60

# frozen fixture: distinct configurations visited by
# explore(n=2, k=1, m=2, threshold=2, depth=14, one write each)
HONEST_EXPLORE_STATES = 478


def honest_scenario(n, k, seed, *, budget=5000, crashes=None, workload_len=600,
                    collect_ratio=0.1, kind="fair_random"):
    params = {"collect_ratio": collect_ratio} if kind == "fair_random" else {}
    return Scenario(n=n, k=k, m=n + k - 1, threshold=n,
                    scheduler_kind=kind, scheduler_params=params,
                    crashes=crashes or {}, workload_len=workload_len,
                    seed=seed, budget=budget)


def random_crashes(n, k, seed, budget) -> dict:
    """Seed-derived crash pattern keeping at least one survivor."""
    rng = random.Random((n * 1000003 + k * 101 + seed) & 0xFFFFFFFF)
    ids = list(range(1, n + 1))
    how_many = rng.randrange(0, n)  # 0..n-1 crashes
    victims = rng.sample(ids, how_many)
    return {pid: rng.randrange(0, max(1, budget // 2)) for pid in victims}


def criterion1_scenarios(seeds=200):
    for n in (2, 3, 4):
        for k in (1, 2):
            for seed in range(seeds):
                crashes = random_crashes(n, k, seed, 5000)
                yield honest_scenario(n, k, seed, crashes=crashes)


# --- hand-built traces for unit-level checker tests -------------------------


def dummy_scenario(n=2, workload_len=4):
    return Scenario(n=n, k=1, m=n, threshold=n, scheduler_kind="round_robin",
                    scheduler_params={}, crashes={}, workload_len=workload_len,
                    seed=0, budget=100)


def op_trace(events_spec, n=2, workload_len=4):
    """Build a trace containing only operation events, for the reading-map
    checker (it ignores register images)."""
    registry = TripleRegistry()
    events = []
    for i, (actor, kind, op, extra) in enumerate(events_spec):
        fields = {"op": op}
        if op == OP_WRITE:
            fields["triple"] = extra
            if extra is not None:
                registry.register(extra)
        elif kind == KIND_OP_END:
            fields["values"] = extra
            for t in extra:
                registry.register(t)
        events.append(StepEvent(i, actor, kind, registers_after=(), poised_after=(),
                                **fields))
    scen = dummy_scenario(n, workload_len)
    final = MemoryState((RegContent(0, {}),) * scen.m, {})
    return Trace(scen, registry, events, final, "completed")


# --- canned mutations (checker soundness) ------------------------------------


def clone_event(ev: StepEvent, **over) -> StepEvent:
    fields = {name: getattr(ev, name) for name in StepEvent.__slots__}
    fields.update(over)
    seq = fields.pop("seq")
    actor = fields.pop("actor")
    kind = fields.pop("kind")
    return StepEvent(seq, actor, kind, **fields)


def _clone_trace(trace: Trace, events) -> Trace:
    return Trace(trace.scenario, trace.registry, events, trace.final, trace.outcome)


def mutate_stale_collect(trace: Trace) -> Trace:
    """Replace one collect's returned triple with an older counter from the
    same writer, where both writes closed before the collect began."""
    closed_before: dict[int, list[Triple]] = {}
    done: dict[int, Triple] = {}
    for i, ev in enumerate(trace.events):
        if ev.kind == KIND_OP_END and ev.op == OP_WRITE:
            closed_before.setdefault(ev.actor, []).append(ev.triple)
        if ev.kind == KIND_OP_END and ev.op == OP_COLLECT:
            for t in ev.values:
                history = closed_before.get(t.writer, [])
                older = [h for h in history if h.counter < t.counter]
                if t in history and older:
                    stale = older[-1]
                    values = tuple(stale if v == t else v for v in ev.values)
                    events = list(trace.events)
                    events[i] = clone_event(ev, values=values)
                    return _clone_trace(trace, events)
    raise AssertionError("no mutable collect found; enlarge the base trace")


def mutate_drop_collect_entry(trace: Trace) -> Trace:
    """Delete one collect value whose writer closed a write earlier."""
    closed: set[int] = set()
    for i, ev in enumerate(trace.events):
        if ev.kind == KIND_OP_END and ev.op == OP_WRITE:
            closed.add(ev.actor)
        if ev.kind == KIND_OP_END and ev.op == OP_COLLECT:
            victims = [t for t in ev.values if t.writer in closed]
            if victims:
                values = tuple(t for t in ev.values if t != victims[0])
                events = list(trace.events)
                events[i] = clone_event(ev, values=values)
                return _clone_trace(trace, events)
    raise AssertionError("no collect with a droppable entry found")


def mutate_erase_uncovered_triple(trace: Trace) -> Trace:
    """Erase one triple from a register that held it while uncovered, from
    the following event onward."""
    for i, ev in enumerate(trace.events[:-1]):
        covered = {idx for _, idx in ev.poised_after}
        regs = ev.registers_after
        for r in range(len(regs)):
            if r in covered or not regs[r].bits:
                continue
            nxt = trace.events[i + 1].registers_after[r].bits
            common = regs[r].bits & nxt
            if not common:
                continue
            bit = common & -common  # lowest surviving triple
            events = list(trace.events)
            for j in range(i + 1, len(events)):
                ej = events[j]
                old = ej.registers_after
                if not old[r].bits & bit:
                    continue
                new_regs = list(old)
                new_regs[r] = RegContent(old[r].bits & ~bit, old[r].latest)
                events[j] = clone_event(ej, registers_after=tuple(new_regs))
            return _clone_trace(trace, events)
    raise AssertionError("no uncovered register with persistent content found")
