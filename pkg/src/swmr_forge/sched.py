"""Scenarios, schedulers, and the deterministic run loop.

A scenario fixes everything about a run: sizes, threshold, scheduler kind
and parameters, crash schedule, per-process workload length, seed, and the
step budget.  Runs are pure functions of the scenario: same scenario, same
bytes out.

The run loop advances in *turns*.  Each turn is one atomic step of one
process: a write-machine step (snapshot-and-arm, or fire), an injected
read-only collect, or a crash.  Crashes preempt the scheduler at their
fixed turn index.  Schedulers choose among eligible positions only; they
are keyed by process position, never by raw id, so renaming participants
never changes scheduling decisions.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

from . import algo, memory as mem_ops
from .algo import (PHASE_IDLE, SnapshotOutcome, UpdateOutcome, WriterState,
                   begin_write, collect, initial_writer, writer_step)
from .core import ProcessId, canonical_key
from .memory import (KIND_CRASH, KIND_OP_BEGIN, KIND_OP_END, KIND_SNAPSHOT,
                     KIND_UPDATE, OP_COLLECT, OP_WRITE, MemoryState, StepEvent,
                     Trace, TripleRegistry, initial_memory, poised_target)

SCHEDULER_KINDS = ("round_robin", "fair_random", "solo", "fixed_set",
                   "covering", "script")

DEFAULT_FAIRNESS_W = 4
DEFAULT_COLLECT_RATIO = 0.1


class ScenarioError(ValueError):
    """Scenario fails validation or the file carries unknown fields."""


def default_ids(n: int) -> tuple[ProcessId, ...]:
    return tuple(range(1, n + 1))


def workload_value(position: int, op_index: int) -> int:
    """Per-process strictly increasing values, keyed by position so that
    renaming ids leaves the written values untouched."""
    return (position + 1) * 1_000_000 + op_index


@dataclass(frozen=True)
class Scenario:
    n: int
    k: int
    m: int
    threshold: int
    scheduler_kind: str
    scheduler_params: dict
    crashes: dict  # ProcessId -> turn index
    workload_len: int
    seed: int
    budget: int
    ids: tuple = ()

    def __post_init__(self):
        if not self.ids:
            object.__setattr__(self, "ids", default_ids(self.n))

    def validate(self) -> None:
        if self.n < 1:
            raise ScenarioError("n must be >= 1")
        if not 1 <= self.k <= self.n:
            raise ScenarioError(f"k must satisfy 1 <= k <= n, got k={self.k} n={self.n}")
        if self.m < 1:
            raise ScenarioError("m must be >= 1")
        if self.threshold < 1:
            raise ScenarioError("threshold must be >= 1")
        if self.workload_len < 0:
            raise ScenarioError("workload_len must be >= 0")
        if self.budget < 0:
            raise ScenarioError("budget must be >= 0")
        if not 0 <= self.seed < 2 ** 64:
            raise ScenarioError("seed must fit in 64 bits")
        if len(set(self.ids)) != self.n or any(i < 1 for i in self.ids):
            raise ScenarioError("ids must be n distinct positive integers")
        if tuple(sorted(self.ids)) != tuple(self.ids):
            raise ScenarioError("ids must be sorted ascending")
        if self.scheduler_kind not in SCHEDULER_KINDS:
            raise ScenarioError(f"unknown scheduler kind {self.scheduler_kind!r}")
        _validate_params(self.scheduler_kind, self.scheduler_params, self.n)
        for pid, step in self.crashes.items():
            if pid not in self.ids:
                raise ScenarioError(f"crash schedule names unknown process {pid}")
            if step < 0:
                raise ScenarioError("crash step must be >= 0")

    def position_of(self, pid: ProcessId) -> int:
        return self.ids.index(pid)

    def to_json_obj(self, rename: Optional[dict] = None) -> dict:
        crashes = {str(rename[p] if rename else p): s
                   for p, s in sorted(self.crashes.items())}
        return {
            "n": self.n, "k": self.k, "m": self.m, "threshold": self.threshold,
            "scheduler": {"kind": self.scheduler_kind,
                          "params": dict(sorted(self.scheduler_params.items()))},
            "crashes": crashes,
            "workload_len": self.workload_len,
            "seed": self.seed, "budget": self.budget,
        }

    @staticmethod
    def from_json_obj(obj: dict) -> "Scenario":
        required = {"n", "k", "m", "threshold", "scheduler", "crashes",
                    "workload_len", "seed", "budget"}
        keys = set(obj)
        if keys != required:
            extra = keys - required
            missing = required - keys
            problems = []
            if extra:
                problems.append(f"unknown fields {sorted(extra)}")
            if missing:
                problems.append(f"missing fields {sorted(missing)}")
            raise ScenarioError("; ".join(problems))
        sched = obj["scheduler"]
        if set(sched) != {"kind", "params"}:
            raise ScenarioError("scheduler must have exactly {kind, params}")
        try:
            crashes = {int(p): int(s) for p, s in obj["crashes"].items()}
        except (TypeError, ValueError) as exc:
            raise ScenarioError(f"bad crash schedule: {exc}") from exc
        scen = Scenario(
            n=int(obj["n"]), k=int(obj["k"]), m=int(obj["m"]),
            threshold=int(obj["threshold"]),
            scheduler_kind=str(sched["kind"]),
            scheduler_params=dict(sched["params"]),
            crashes=crashes,
            workload_len=int(obj["workload_len"]),
            seed=int(obj["seed"]), budget=int(obj["budget"]),
        )
        scen.validate()
        return scen

    def renamed(self, mapping: dict) -> "Scenario":
        ids = tuple(mapping[p] for p in self.ids)
        crashes = {mapping[p]: s for p, s in self.crashes.items()}
        return replace(self, ids=ids, crashes=crashes)


_PARAM_KEYS = {
    "round_robin": {"collect_every"},
    "fair_random": {"collect_ratio", "window_w"},
    "solo": {"position"},
    "fixed_set": {"positions", "collect_every"},
    "covering": {"victim_position", "reader_position"},
    "script": {"actors"},
}


def _validate_params(kind: str, params: dict, n: int) -> None:
    allowed = _PARAM_KEYS[kind]
    unknown = set(params) - allowed
    if unknown:
        raise ScenarioError(f"scheduler {kind!r} got unknown params {sorted(unknown)}")
    if kind == "solo":
        pos = params.get("position", 0)
        if not 0 <= pos < n:
            raise ScenarioError("solo position out of range")
    if kind == "fixed_set":
        positions = params.get("positions")
        if not positions or any(not 0 <= p < n for p in positions):
            raise ScenarioError("fixed_set needs a non-empty list of valid positions")
    if kind == "covering":
        victim = params.get("victim_position", n - 1)
        if not 0 <= victim < n:
            raise ScenarioError("covering victim_position out of range")
    if kind == "script":
        if not isinstance(params.get("actors"), list):
            raise ScenarioError("script scheduler needs an actors list")


# --- the simulation driver -------------------------------------------------

class SimDriver:
    """Owns all run state and applies one turn at a time.

    The same driver backs scheduler-driven runs, scripted adversaries,
    path replay, and (with record=False and fork()) the exhaustive
    explorer, so every consumer sees identical step semantics.
    """

    def __init__(self, scenario: Scenario, record: bool = True,
                 registry: Optional[TripleRegistry] = None):
        self.scenario = scenario
        self.registry = registry if registry is not None else TripleRegistry()
        self.mem: MemoryState = initial_memory(scenario.m)
        self.writers: list[WriterState] = [initial_writer(pid) for pid in scenario.ids]
        self.crashed: set[int] = set()
        self.turn = 0
        self.record = record
        self.events: list[StepEvent] = []

    def fork(self) -> "SimDriver":
        child = SimDriver.__new__(SimDriver)
        child.scenario = self.scenario
        child.registry = self.registry
        child.mem = self.mem
        child.writers = list(self.writers)
        child.crashed = set(self.crashed)
        child.turn = self.turn
        child.record = False
        child.events = []
        return child

    # -- inspection -------------------------------------------------------

    def eligible(self, pos: int) -> bool:
        if pos in self.crashed:
            return False
        w = self.writers[pos]
        return w.phase != PHASE_IDLE or w.op_counter < self.scenario.workload_len

    def eligible_positions(self) -> list[int]:
        return [p for p in range(self.scenario.n) if self.eligible(p)]

    def poised_of(self, pos: int) -> Optional[int]:
        return poised_target(self.mem, self.scenario.ids[pos])

    def all_done(self) -> bool:
        return not self.eligible_positions()

    # -- event plumbing ---------------------------------------------------

    def _poised_tuple(self) -> tuple:
        return tuple(sorted((pid, pw.index) for pid, pw in self.mem.pending.items()))

    def _emit(self, actor: ProcessId, kind: str, **fields) -> None:
        if not self.record:
            return
        self.events.append(StepEvent(
            len(self.events), actor, kind,
            registers_after=self.mem.registers,
            poised_after=self._poised_tuple(),
            **fields,
        ))

    # -- turns ------------------------------------------------------------

    def advance_turn(self, pos: int) -> Optional[UpdateOutcome]:
        """One write-machine step; begins the next workload write if idle."""
        pid = self.scenario.ids[pos]
        w = self.writers[pos]
        if w.phase == PHASE_IDLE:
            if w.op_counter >= self.scenario.workload_len:
                raise algo.ProtocolError(f"process {pid} has no workload left")
            value = workload_value(pos, w.op_counter)
            w = begin_write(w, value, self.registry,
                            self.scenario.n, self.scenario.m)
            self._emit(pid, KIND_OP_BEGIN, op=OP_WRITE, triple=w.current)
        triple = w.current
        w, self.mem, outcome = writer_step(
            w, self.mem, self.scenario.n, self.scenario.k, self.scenario.threshold)
        self.writers[pos] = w
        if isinstance(outcome, SnapshotOutcome):
            self._emit(pid, KIND_SNAPSHOT, op=OP_WRITE, snap=outcome.snap)
            self.turn += 1
            return None
        self._emit(pid, KIND_UPDATE, index=outcome.index, content=outcome.content,
                   active_at_arm=outcome.active_at_arm)
        if outcome.completed:
            self._emit(pid, KIND_OP_END, op=OP_WRITE, triple=triple)
        self.turn += 1
        return outcome

    def collect_turn(self, pos: int) -> dict:
        pid = self.scenario.ids[pos]
        if pos in self.crashed:
            raise algo.ProtocolError(f"process {pid} crashed; cannot collect")
        self._emit(pid, KIND_OP_BEGIN, op=OP_COLLECT)
        values, snap = collect(pid, self.mem, self.registry)
        self._emit(pid, KIND_SNAPSHOT, op=OP_COLLECT, snap=snap)
        ordered = tuple(sorted(values.values(), key=canonical_key))
        self._emit(pid, KIND_OP_END, op=OP_COLLECT, values=ordered)
        self.turn += 1
        return values

    def crash_turn(self, pos: int) -> None:
        pid = self.scenario.ids[pos]
        self.mem = mem_ops.drop_pending(self.mem, pid)
        self.crashed.add(pos)
        self._emit(pid, KIND_CRASH)
        self.turn += 1

    def finish(self, outcome: str) -> Trace:
        return Trace(self.scenario, self.registry, self.events, self.mem, outcome)


# --- schedulers --------------------------------------------------------------

ACTION_ADVANCE = "advance"
ACTION_COLLECT = "collect"


class RoundRobin:
    def __init__(self, scenario: Scenario):
        self.collect_every = scenario.scheduler_params.get("collect_every", 0)
        self._next = 0

    def next_turn(self, driver: SimDriver, eligible: list[int]):
        n = driver.scenario.n
        for _ in range(n):
            pos = self._next % n
            self._next += 1
            if pos in eligible:
                if self.collect_every and driver.turn % self.collect_every == self.collect_every - 1:
                    return pos, ACTION_COLLECT
                return pos, ACTION_ADVANCE
        return None


class FairRandom:
    """Uniform random choice with a hard fairness window: no eligible
    process ever goes n*W consecutive turns without being scheduled."""

    def __init__(self, scenario: Scenario):
        params = scenario.scheduler_params
        self.rng = random.Random(scenario.seed)
        self.collect_ratio = params.get("collect_ratio", DEFAULT_COLLECT_RATIO)
        self.window = scenario.n * params.get("window_w", DEFAULT_FAIRNESS_W)
        self.last: dict[int, int] = {}

    def next_turn(self, driver: SimDriver, eligible: list[int]):
        if not eligible:
            return None
        t = driver.turn
        gaps = [(t - self.last.get(pos, -1), pos) for pos in eligible]
        worst_gap, worst_pos = max(gaps)
        if worst_gap >= self.window - driver.scenario.n:
            pos = worst_pos
        else:
            pos = eligible[self.rng.randrange(len(eligible))]
        self.last[pos] = t
        if self.collect_ratio and self.rng.random() < self.collect_ratio:
            return pos, ACTION_COLLECT
        return pos, ACTION_ADVANCE


class Solo:
    def __init__(self, scenario: Scenario):
        self.position = scenario.scheduler_params.get("position", 0)

    def next_turn(self, driver: SimDriver, eligible: list[int]):
        if self.position in eligible:
            return self.position, ACTION_ADVANCE
        return None


class FixedSet:
    def __init__(self, scenario: Scenario):
        self.positions = list(scenario.scheduler_params["positions"])
        self.collect_every = scenario.scheduler_params.get("collect_every", 0)
        self._next = 0

    def next_turn(self, driver: SimDriver, eligible: list[int]):
        for _ in range(len(self.positions)):
            pos = self.positions[self._next % len(self.positions)]
            self._next += 1
            if pos in eligible:
                if self.collect_every and driver.turn % self.collect_every == self.collect_every - 1:
                    return pos, ACTION_COLLECT
                return pos, ACTION_ADVANCE
        return None


class Script:
    """Fixed actor sequence; action is forced by state (advance while the
    process has write work, otherwise collect), as in the explorer."""

    def __init__(self, scenario: Scenario):
        self.actors = list(scenario.scheduler_params["actors"])
        self._i = 0

    def next_turn(self, driver: SimDriver, eligible: list[int]):
        if self._i >= len(self.actors):
            return None
        pid = self.actors[self._i]
        self._i += 1
        try:
            pos = driver.scenario.position_of(pid)
        except ValueError:
            raise ScenarioError(f"script names unknown process {pid}")
        if pos in driver.crashed:
            raise ScenarioError(f"script schedules crashed process {pid}")
        if driver.eligible(pos):
            return pos, ACTION_ADVANCE
        return pos, ACTION_COLLECT


class CoveringAdversary:
    """Four-phase block-write construction.

    Phase 1 advances each non-victim until it is poised to a register not
    yet covered by a parked process, then freezes it there.  Phase 2 runs
    the victim solo until it completes a write.  Phase 3 fires every
    parked write (the block write).  Phase 4 is a collect by the reader.
    The victim is never scheduled in phases 1 or 3.
    """

    def __init__(self, scenario: Scenario):
        params = scenario.scheduler_params
        self.victim = params.get("victim_position", scenario.n - 1)
        self.reader = params.get("reader_position",
                                 0 if self.victim != 0 else scenario.n - 1)
        self.workers = [p for p in range(scenario.n) if p != self.victim]
        self.parked: dict[int, int] = {}   # position -> covered register
        self.phase = 1
        self.coverage_complete = False
        self._worker_idx = 0
        self._worker_steps = 0
        self._given_up: set[int] = set()
        self._phase_cap = 8 * (scenario.m + 2)
        self._fire_queue: list[int] = []

    def _needed(self, m: int) -> set[int]:
        return set(range(m)) - set(self.parked.values())

    def next_turn(self, driver: SimDriver, eligible: list[int]):
        m = driver.scenario.m
        while True:
            if self.phase == 1:
                needed = self._needed(m)
                if not needed:
                    self.coverage_complete = True
                    self.phase = 2
                    self._worker_steps = 0
                    continue
                pos = self._current_worker(driver, needed)
                if pos is None:
                    self.phase = 2   # partial coverage: honest configs land here
                    self._worker_steps = 0
                    continue
                return pos, ACTION_ADVANCE
            if self.phase == 2:
                if driver.writers[self.victim].op_counter >= 1 or \
                        not driver.eligible(self.victim) or \
                        self._worker_steps > self._phase_cap:
                    self.phase = 3
                    self._fire_queue = sorted(self.parked)
                    continue
                self._worker_steps += 1
                return self.victim, ACTION_ADVANCE
            if self.phase == 3:
                while self._fire_queue:
                    pos = self._fire_queue.pop(0)
                    if driver.poised_of(pos) is not None:
                        return pos, ACTION_ADVANCE
                self.phase = 4
                continue
            if self.phase == 4:
                self.phase = 5
                return self.reader, ACTION_COLLECT
            return None

    def _current_worker(self, driver: SimDriver, needed: set[int]) -> Optional[int]:
        while self._worker_idx < len(self.workers):
            pos = self.workers[self._worker_idx]
            if pos in self.parked or pos in self._given_up:
                self._worker_idx += 1
                self._worker_steps = 0
                continue
            target = driver.poised_of(pos)
            if target is not None and target in needed:
                self.parked[pos] = target
                self._worker_idx += 1
                self._worker_steps = 0
                continue
            if not driver.eligible(pos) or self._worker_steps > self._phase_cap:
                self._given_up.add(pos)
                self._worker_idx += 1
                self._worker_steps = 0
                continue
            self._worker_steps += 1
            return pos
        return None


def make_scheduler(scenario: Scenario):
    kind = scenario.scheduler_kind
    if kind == "round_robin":
        return RoundRobin(scenario)
    if kind == "fair_random":
        return FairRandom(scenario)
    if kind == "solo":
        return Solo(scenario)
    if kind == "fixed_set":
        return FixedSet(scenario)
    if kind == "covering":
        return CoveringAdversary(scenario)
    if kind == "script":
        return Script(scenario)
    raise ScenarioError(f"unknown scheduler kind {kind!r}")


def run(scenario: Scenario) -> Trace:
    """Drive a scenario to completion; deterministic in the scenario alone."""
    scenario.validate()
    driver = SimDriver(scenario)
    scheduler = make_scheduler(scenario)
    crash_queue = sorted((step, scenario.position_of(pid))
                         for pid, step in scenario.crashes.items())
    ci = 0
    outcome = "completed"
    while True:
        if driver.turn >= scenario.budget:
            outcome = "budget_exhausted"
            break
        if ci < len(crash_queue) and crash_queue[ci][0] <= driver.turn:
            pos = crash_queue[ci][1]
            ci += 1
            if pos not in driver.crashed:
                driver.crash_turn(pos)
            continue
        eligible = driver.eligible_positions()
        choice = scheduler.next_turn(driver, eligible)
        if choice is None:
            outcome = "completed" if not eligible else "halted_by_scheduler"
            break
        pos, action = choice
        if action == ACTION_COLLECT:
            driver.collect_turn(pos)
        else:
            driver.advance_turn(pos)
    return driver.finish(outcome)


def covering_block_write_plan(n: int, *, m: Optional[int] = None,
                              threshold: Optional[int] = None,
                              victim_position: Optional[int] = None,
                              workload_len: int = 1,
                              budget: int = 0,
                              seed: int = 0,
                              k: int = 1) -> Scenario:
    """Scenario for the lost-write construction.  Defaults deliberately
    under-provision the memory (m = n-1 registers, threshold n-1) so the
    block write erases the victim's completed value; passing the honest
    m and threshold instead shows the construction failing."""
    if n < 2:
        raise ScenarioError("covering plan needs n >= 2")
    m = n - 1 if m is None else m
    threshold = n - 1 if threshold is None else threshold
    victim = n - 1 if victim_position is None else victim_position
    if budget <= 0:
        budget = 40 * (n + 1) * (m + 2)
    return Scenario(
        n=n, k=k, m=m, threshold=threshold,
        scheduler_kind="covering",
        scheduler_params={"victim_position": victim},
        crashes={}, workload_len=workload_len, seed=seed, budget=budget,
    )
