"""Deterministic simulator and verification harness for a k-lock-free
single-writer multi-reader memory emulated over n+k-1 multi-writer
registers, with trace oracles for safety, persistence, register budget,
and progress, plus a covering-adversary lost-write demonstrator and a
bounded exhaustive interleaving explorer."""

from .core import MalformedViewError, Triple, latest_per_process, merge_views, occurrence_count
from .sched import Scenario, covering_block_write_plan, run

__all__ = [
    "MalformedViewError", "Triple", "latest_per_process", "merge_views",
    "occurrence_count", "Scenario", "covering_block_write_plan", "run",
]
