"""Step machines for the emulated single-writer memory.

A write of value v by process p works on a full-information view.  The
process adds (v, p, opCounter) to its view, then loops: take an atomic
snapshot, fold every newly observed writer into its active set, merge the
snapshot into its view, and overwrite one register with the whole view,
cycling the target over the first `write_pos_max` registers.  The cycle
width starts at n and grows by one for every other process observed making
fresh progress, capped at n+k-1 (and at the register count, so that
deliberately under-provisioned variants stay in range).  The write returns
once a snapshot showed its own triple in at least `threshold` registers
(n in the honest configuration).

The loop is do-while shaped: the guard is evaluated after the register
write fires, against the snapshot taken earlier in the same iteration.

Two scheduling granularities matter.  Taking the snapshot and becoming
poised to the next register write are one atomic step: from the moment the
snapshot returns, the process covers its target register with a frozen
view.  Firing the armed write is the other step.  A collect is a single
read-only snapshot followed by local selection of the freshest triple per
writer; it touches no write-machine state and is permitted even while the
same process is mid-write.
"""

from __future__ import annotations

from typing import NamedTuple, Optional

from . import memory as mem_ops
from .core import ProcessId, Triple, merge_latest
from .memory import MemoryState, RegContent, TripleRegistry

PHASE_IDLE = "idle"
PHASE_NEED_SNAPSHOT = "need_snapshot"
PHASE_NEED_UPDATE = "need_update"


class ProtocolError(RuntimeError):
    """Step machine driven outside its contract (wrong phase, etc.)."""


class WriterState(NamedTuple):
    owner: ProcessId
    view_bits: int
    view_latest: dict            # writer -> max counter in view; copy-on-write
    op_counter: int
    active: frozenset
    write_pos: int
    write_pos_max: int
    phase: str
    current: Optional[Triple]
    current_bit: Optional[int]
    held_snap: Optional[tuple[RegContent, ...]]


def initial_writer(owner: ProcessId) -> WriterState:
    return WriterState(owner, 0, {}, 0, frozenset(), 0, 0, PHASE_IDLE, None, None, None)


def write_pos_bound(n: int, k: int, active_count: int, m: int) -> int:
    """Registers a writer may cycle over given how many processes it has
    observed as concurrently active (itself included)."""
    return min(n + active_count - 1, n + k - 1, m)


def begin_write(s: WriterState, value: int, registry: TripleRegistry,
                n: int, m: int) -> WriterState:
    if s.phase != PHASE_IDLE:
        raise ProtocolError(f"process {s.owner} already has a write in progress")
    triple = Triple(value, s.owner, s.op_counter)
    bit = registry.register(triple)
    latest = dict(s.view_latest)
    if s.op_counter > latest.get(s.owner, -1):
        latest[s.owner] = s.op_counter
    return s._replace(
        view_bits=s.view_bits | (1 << bit),
        view_latest=latest,
        active=frozenset((s.owner,)),
        write_pos=0,
        write_pos_max=min(n, m),
        phase=PHASE_NEED_SNAPSHOT,
        current=triple,
        current_bit=bit,
        held_snap=None,
    )


class SnapshotOutcome(NamedTuple):
    snap: tuple[RegContent, ...]
    armed_index: int
    active_count: int


class UpdateOutcome(NamedTuple):
    index: int
    content: RegContent
    active_at_arm: int
    completed: bool


def writer_step(s: WriterState, mem: MemoryState, n: int, k: int,
                threshold: int):
    """Advance one shared-memory step; returns (state', mem', outcome)."""
    if s.phase == PHASE_NEED_SNAPSHOT:
        snap, mem = mem_ops.snapshot(mem, s.owner)
        observed = merge_latest(reg.latest for reg in snap)
        fresh = {pid for pid, c in observed.items()
                 if c > s.view_latest.get(pid, -1)}
        active = s.active | fresh
        view = s.view_bits
        for reg in snap:
            view |= reg.bits
        latest = merge_latest((s.view_latest, observed))
        content = RegContent(view, latest)
        mem = mem_ops.arm_update(mem, s.owner, s.write_pos, content)
        s = s._replace(view_bits=view, view_latest=latest, active=active,
                       phase=PHASE_NEED_UPDATE, held_snap=snap)
        return s, mem, SnapshotOutcome(snap, s.write_pos, len(active))

    if s.phase == PHASE_NEED_UPDATE:
        active_at_arm = len(s.active)
        index, content, mem = mem_ops.fire_update(mem, s.owner)
        pos = (s.write_pos + 1) % s.write_pos_max
        bound = write_pos_bound(n, k, len(s.active), len(mem.registers))
        occurrences = sum(1 for reg in s.held_snap
                          if (reg.bits >> s.current_bit) & 1)
        if occurrences >= threshold:
            s = s._replace(write_pos=pos, write_pos_max=bound,
                           phase=PHASE_IDLE, op_counter=s.op_counter + 1,
                           held_snap=None)
            return s, mem, UpdateOutcome(index, content, active_at_arm, True)
        s = s._replace(write_pos=pos, write_pos_max=bound,
                       phase=PHASE_NEED_SNAPSHOT, held_snap=None)
        return s, mem, UpdateOutcome(index, content, active_at_arm, False)

    raise ProtocolError(f"process {s.owner} stepped in phase {s.phase}")


class CollectResult(NamedTuple):
    reader: ProcessId
    values: dict  # ProcessId -> Triple
    snapshot_seq: int


def collect(p: ProcessId, mem: MemoryState,
            registry: TripleRegistry) -> tuple[dict, tuple[RegContent, ...]]:
    """One read-only snapshot, then the freshest triple per observed writer."""
    snap = mem_ops.snapshot_readonly(mem)
    latest = merge_latest(reg.latest for reg in snap)
    values = {pid: registry.by_writer_counter(pid, c) for pid, c in latest.items()}
    return values, snap
