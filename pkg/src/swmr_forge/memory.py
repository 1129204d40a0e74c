"""Simulated shared memory: m multi-writer registers with atomic snapshot,
whole-register update, and an explicit poised/pending model.

Updates are two-phase.  A process first *arms* an update (it is then poised
to, i.e. covers, one register: the written content is frozen at arm time)
and later *fires* it, replacing the register's whole content.  Arming is
what covering adversaries and the persistence checkers inspect; firing is
the only operation that mutates a register.

Performance representation: within one simulation every triple gets a bit
position in a TripleRegistry, and a register's content is an int bitmask
plus a small per-writer latest-counter map.  The value-level API in
`core` is the reference semantics; this module's packed form is only an
encoding of the same sets.

Trace files are JSON Lines: one object per step event with fields exactly
{seq, actor, kind, payload, mem_digest}, then one footer object keyed
"footer".  mem_digest is the 64-bit FNV-1a hash of the canonical register
serialization (registers in index order; per register the triples sorted
by (writer, counter, value), each packed as three little-endian u64
words: writer, counter, value).
"""

from __future__ import annotations

import json
from typing import Callable, Iterator, NamedTuple, Optional

from .core import ProcessId, Triple, canonical_key

KIND_SNAPSHOT = "snapshot"
KIND_UPDATE = "update"
KIND_OP_BEGIN = "op_begin"
KIND_OP_END = "op_end"
KIND_CRASH = "crash"

OP_WRITE = "write"
OP_COLLECT = "collect"


class MemoryError_(RuntimeError):
    """Illegal use of the simulated memory (bad index, double arm, ...)."""


class TripleRegistry:
    """Assigns each triple of one simulation a stable bit position.

    Bit positions may be preassigned (`preload`) so that packed views are
    comparable across different interleavings of the same workload; the
    exhaustive explorer relies on this.
    """

    def __init__(self) -> None:
        self.triples: list[Triple] = []
        self._index: dict[Triple, int] = {}
        self._by_writer_counter: dict[tuple[ProcessId, int], Triple] = {}

    def register(self, t: Triple) -> int:
        bit = self._index.get(t)
        if bit is None:
            bit = len(self.triples)
            self.triples.append(t)
            self._index[t] = bit
            self._by_writer_counter[(t.writer, t.counter)] = t
        return bit

    def preload(self, ids: tuple[ProcessId, ...], workload_len: int,
                value_for: Callable[[int, int], int]) -> None:
        for pos, pid in enumerate(ids):
            for op in range(workload_len):
                self.register(Triple(value_for(pos, op), pid, op))

    def bit_of(self, t: Triple) -> int:
        return self._index[t]

    def by_writer_counter(self, writer: ProcessId, counter: int) -> Triple:
        return self._by_writer_counter[(writer, counter)]

    def unpack(self, bits: int) -> list[Triple]:
        out = []
        i = 0
        while bits:
            if bits & 1:
                out.append(self.triples[i])
            bits >>= 1
            i += 1
        return out


class RegContent(NamedTuple):
    """Content of one register: packed triple set plus per-writer max counter."""

    bits: int
    latest: dict  # ProcessId -> max counter; never mutated once placed


EMPTY_REG = RegContent(0, {})


class PendingWrite(NamedTuple):
    index: int
    content: RegContent


class MemoryState(NamedTuple):
    """Registers plus, per process, the update it is poised to perform."""

    registers: tuple[RegContent, ...]
    pending: dict  # ProcessId -> PendingWrite; copied on every change


def initial_memory(m: int) -> MemoryState:
    return MemoryState((EMPTY_REG,) * m, {})


def snapshot(mem: MemoryState, p: ProcessId) -> tuple[tuple[RegContent, ...], MemoryState]:
    """Atomically read all registers.  Refused while `p` is poised to an
    update: in the step model a poised process's next step is that write,
    so it must fire or crash first."""
    if p in mem.pending:
        raise MemoryError_(f"process {p} is poised to register "
                           f"{mem.pending[p].index}; cannot snapshot")
    return mem.registers, mem


def snapshot_readonly(mem: MemoryState) -> tuple[RegContent, ...]:
    """Snapshot without the poised check, for reads that are not steps of
    the writing state machine (collect turns injected by the harness)."""
    return mem.registers


def arm_update(mem: MemoryState, p: ProcessId, index: int, content: RegContent) -> MemoryState:
    if not 0 <= index < len(mem.registers):
        raise MemoryError_(f"update index {index} out of range 0..{len(mem.registers) - 1}")
    if p in mem.pending:
        raise MemoryError_(f"process {p} already poised to register {mem.pending[p].index}")
    pending = dict(mem.pending)
    pending[p] = PendingWrite(index, content)
    return MemoryState(mem.registers, pending)


def fire_update(mem: MemoryState, p: ProcessId) -> tuple[int, RegContent, MemoryState]:
    """Execute the armed write verbatim: whole-register replacement."""
    pw = mem.pending.get(p)
    if pw is None:
        raise MemoryError_(f"process {p} has no pending update")
    regs = list(mem.registers)
    regs[pw.index] = pw.content
    pending = dict(mem.pending)
    del pending[p]
    return pw.index, pw.content, MemoryState(tuple(regs), pending)


def drop_pending(mem: MemoryState, p: ProcessId) -> MemoryState:
    """Crash handling: a crashed process's armed write is never executed."""
    if p not in mem.pending:
        return mem
    pending = dict(mem.pending)
    del pending[p]
    return MemoryState(mem.registers, pending)


def poised_target(mem: MemoryState, p: ProcessId) -> Optional[int]:
    pw = mem.pending.get(p)
    return None if pw is None else pw.index


def covered_indices(mem: MemoryState) -> set[int]:
    return {pw.index for pw in mem.pending.values()}


class StepEvent:
    """One totally-ordered step of a run, with the memory image after it.

    Only {seq, actor, kind, payload, mem_digest} are serialized; the
    packed after-images (`registers_after`, `poised_after`) exist so the
    offline checkers can consume traces without replaying.
    """

    __slots__ = ("seq", "actor", "kind", "op", "snap", "index", "content",
                 "active_at_arm", "triple", "values", "registers_after",
                 "poised_after")

    def __init__(self, seq: int, actor: ProcessId, kind: str, *,
                 op: Optional[str] = None,
                 snap: Optional[tuple[RegContent, ...]] = None,
                 index: Optional[int] = None,
                 content: Optional[RegContent] = None,
                 active_at_arm: Optional[int] = None,
                 triple: Optional[Triple] = None,
                 values: Optional[tuple[Triple, ...]] = None,
                 registers_after: tuple[RegContent, ...] = (),
                 poised_after: tuple[tuple[ProcessId, int], ...] = ()):
        self.seq = seq
        self.actor = actor
        self.kind = kind
        self.op = op
        self.snap = snap
        self.index = index
        self.content = content
        self.active_at_arm = active_at_arm
        self.triple = triple
        self.values = values
        self.registers_after = registers_after
        self.poised_after = poised_after

    def __repr__(self) -> str:  # debugging aid only
        return f"StepEvent(seq={self.seq}, actor={self.actor}, kind={self.kind})"


class Trace:
    """A finished run: the scenario, its events, and the final memory."""

    def __init__(self, scenario, registry: TripleRegistry,
                 events: list[StepEvent], final: MemoryState, outcome: str):
        self.scenario = scenario
        self.registry = registry
        self.events = events
        self.final = final
        self.outcome = outcome

    def ops_completed(self) -> dict[ProcessId, dict[str, int]]:
        out: dict[ProcessId, dict[str, int]] = {}
        for ev in self.events:
            if ev.kind == KIND_OP_END:
                per = out.setdefault(ev.actor, {OP_WRITE: 0, OP_COLLECT: 0})
                per[ev.op] += 1
        return out

    def updates_per_register(self) -> list[int]:
        hist = [0] * len(self.final.registers)
        for ev in self.events:
            if ev.kind == KIND_UPDATE:
                hist[ev.index] += 1
        return hist


# --- digests and serialization -------------------------------------------

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_U64 = (1 << 64) - 1


def fnv1a_64(data: bytes) -> int:
    h = FNV_OFFSET
    for b in data:
        h = ((h ^ b) * FNV_PRIME) & _U64
    return h


def _canonical_register_bytes(registers: tuple[RegContent, ...],
                              registry: TripleRegistry,
                              rename: Optional[dict] = None,
                              cache: Optional[dict] = None) -> bytes:
    parts = []
    for reg in registers:
        blob = cache.get(reg.bits) if cache is not None else None
        if blob is None:
            triples = registry.unpack(reg.bits)
            if rename:
                triples = [Triple(t.value, rename[t.writer], t.counter) for t in triples]
            triples.sort(key=canonical_key)
            blob = b"".join(
                t.writer.to_bytes(8, "little") + t.counter.to_bytes(8, "little")
                + t.value.to_bytes(8, "little")
                for t in triples
            )
            if cache is not None:
                cache[reg.bits] = blob
        parts.append(blob)
        parts.append(b"|")
    return b"".join(parts)


def registers_digest(registers: tuple[RegContent, ...], registry: TripleRegistry,
                     rename: Optional[dict] = None) -> int:
    return fnv1a_64(_canonical_register_bytes(registers, registry, rename))


def _json_triple(t: Triple, rename: Optional[dict]) -> list[int]:
    w = rename[t.writer] if rename else t.writer
    return [t.value, w, t.counter]


def _json_view(reg: RegContent, registry: TripleRegistry,
               rename: Optional[dict],
               cache: Optional[dict] = None) -> list[list[int]]:
    if cache is not None:
        cached = cache.get(reg.bits)
        if cached is not None:
            return cached
    triples = registry.unpack(reg.bits)
    if rename:
        triples = [Triple(t.value, rename[t.writer], t.counter) for t in triples]
    out = [list(t) for t in sorted(triples, key=canonical_key)]
    if cache is not None:
        cache[reg.bits] = out
    return out


def event_payload(ev: StepEvent, registry: TripleRegistry,
                  rename: Optional[dict] = None,
                  view_cache: Optional[dict] = None) -> dict:
    if ev.kind == KIND_SNAPSHOT:
        return {"op": ev.op,
                "result": [_json_view(r, registry, rename, view_cache) for r in ev.snap]}
    if ev.kind == KIND_UPDATE:
        return {"index": ev.index,
                "view": _json_view(ev.content, registry, rename, view_cache),
                "active_at_arm": ev.active_at_arm}
    if ev.kind == KIND_OP_BEGIN:
        if ev.op == OP_WRITE:
            return {"op": OP_WRITE, "triple": _json_triple(ev.triple, rename)}
        return {"op": OP_COLLECT}
    if ev.kind == KIND_OP_END:
        if ev.op == OP_WRITE:
            return {"op": OP_WRITE, "triple": _json_triple(ev.triple, rename)}
        return {"op": OP_COLLECT,
                "values": [_json_triple(t, rename) for t in ev.values]}
    if ev.kind == KIND_CRASH:
        return {}
    raise ValueError(f"unknown event kind {ev.kind!r}")


def serialize_trace(trace: Trace, rename: Optional[dict] = None) -> bytes:
    """Byte-deterministic JSON Lines rendering of a trace.

    With `rename`, every process id (actors and triple writer fields) is
    substituted and the digests recomputed, which is what trace
    isomorphism compares against.
    """
    lines = []
    digest = 0
    cache: dict = {}
    view_cache: dict = {}
    last_regs: Optional[tuple] = None
    for ev in trace.events:
        if ev.registers_after is not last_regs:
            blob = _canonical_register_bytes(ev.registers_after, trace.registry,
                                             rename, cache)
            digest = fnv1a_64(blob)
            last_regs = ev.registers_after
        obj = {
            "seq": ev.seq,
            "actor": rename[ev.actor] if rename else ev.actor,
            "kind": ev.kind,
            "payload": event_payload(ev, trace.registry, rename, view_cache),
            "mem_digest": f"{digest:016x}",
        }
        lines.append(json.dumps(obj, separators=(",", ":")))
    scen = trace.scenario.to_json_obj(rename) if trace.scenario is not None else None
    footer = {"footer": {"outcome": trace.outcome,
                         "events": len(trace.events),
                         "scenario": scen,
                         "final_digest": f"{registers_digest(trace.final.registers, trace.registry, rename):016x}"}}
    lines.append(json.dumps(footer, separators=(",", ":")))
    return ("\n".join(lines) + "\n").encode("utf-8")


def load_trace_lines(data: bytes) -> tuple[list[dict], dict]:
    """Parse a serialized trace into event dicts plus the footer."""
    events: list[dict] = []
    footer: Optional[dict] = None
    for line in data.decode("utf-8").splitlines():
        if not line:
            continue
        obj = json.loads(line)
        if "footer" in obj:
            footer = obj["footer"]
        else:
            events.append(obj)
    if footer is None:
        raise ValueError("trace file has no footer line")
    return events, footer
