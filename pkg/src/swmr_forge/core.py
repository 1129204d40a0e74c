"""Value-level domain types shared by the simulator and the trace oracles.

A write instance is a triple (value, writer, counter); a view is a set of
triples.  Registers hold views, processes accumulate views, and every
correctness rule in this package is ultimately a statement about which
triples are present where.
"""

from __future__ import annotations

from typing import Iterable, Mapping, NamedTuple, Sequence

ProcessId = int


class MalformedViewError(ValueError):
    """A view holds two triples with equal (writer, counter) but different values."""


class Triple(NamedTuple):
    """One abstract write instance: value written by `writer` as its `counter`-th write."""

    value: int
    writer: ProcessId
    counter: int


# A view is just a frozenset of triples; an alias keeps signatures readable.
View = frozenset


def canonical_key(t: Triple) -> tuple[int, int, int]:
    """Sort key giving views a byte-deterministic serialization order."""
    return (t.writer, t.counter, t.value)


def canonical_triples(v: Iterable[Triple]) -> list[Triple]:
    return sorted(v, key=canonical_key)


def merge_views(a: View, b: View) -> View:
    """Set union of two views (idempotent, commutative, associative)."""
    return frozenset(a) | frozenset(b)


def latest_per_process(v: Iterable[Triple]) -> dict[ProcessId, Triple]:
    """For each writer appearing in `v`, its triple with the maximal counter.

    Raises MalformedViewError if `v` holds two triples with the same
    (writer, counter) but different values; the per-writer counter scheme
    makes that impossible in honest executions, so such a view is garbage.
    """
    seen: dict[tuple[ProcessId, int], int] = {}
    best: dict[ProcessId, Triple] = {}
    for t in v:
        key = (t.writer, t.counter)
        prior = seen.get(key)
        if prior is not None and prior != t.value:
            raise MalformedViewError(
                f"writer {t.writer} counter {t.counter} maps to both "
                f"{prior} and {t.value}"
            )
        seen[key] = t.value
        cur = best.get(t.writer)
        if cur is None or t.counter > cur.counter:
            best[t.writer] = t
    return best


def occurrence_count(registers: Sequence[Iterable[Triple]], t: Triple) -> int:
    """Number of registers whose view contains `t`."""
    return sum(1 for reg in registers if t in reg)


def latest_counters(v: Iterable[Triple]) -> dict[ProcessId, int]:
    """Per-writer maximal counter present in `v` (no value lookup, no validation)."""
    out: dict[ProcessId, int] = {}
    for t in v:
        if t.counter > out.get(t.writer, -1):
            out[t.writer] = t.counter
    return out


def merge_latest(maps: Iterable[Mapping[ProcessId, int]]) -> dict[ProcessId, int]:
    """Pointwise max of per-writer counter maps."""
    out: dict[ProcessId, int] = {}
    for m in maps:
        for pid, c in m.items():
            if c > out.get(pid, -1):
                out[pid] = c
    return out
