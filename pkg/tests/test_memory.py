import itertools

import pytest

from swmr_forge import memory as mem
from swmr_forge.core import Triple
from swmr_forge.memory import (MemoryError_, RegContent, TripleRegistry,
                               fnv1a_64, initial_memory, registers_digest)

P1, P2, P3 = 1, 2, 3


@pytest.fixture
def registry():
    return TripleRegistry()


def reg_of(registry, *triples):
    bits = 0
    latest = {}
    for t in triples:
        bits |= 1 << registry.register(t)
        if t.counter > latest.get(t.writer, -1):
            latest[t.writer] = t.counter
    return RegContent(bits, latest)


def test_fresh_memory_snapshot_all_empty():
    m = initial_memory(3)
    snap, m2 = mem.snapshot(m, P1)
    assert snap == (mem.EMPTY_REG,) * 3
    assert m2.registers == m.registers


def test_snapshot_sees_prior_update(registry):
    m = initial_memory(2)
    content = reg_of(registry, Triple(7, P1, 0))
    m = mem.arm_update(m, P1, 1, content)
    _, _, m = mem.fire_update(m, P1)
    snap, _ = mem.snapshot(m, P2)
    assert snap[1] == content and snap[0] == mem.EMPTY_REG


def test_read_only_snapshots_identical():
    m = initial_memory(2)
    a, m = mem.snapshot(m, P1)
    b, m = mem.snapshot(m, P2)
    assert a == b


def test_arm_records_cover_without_writing(registry):
    m = initial_memory(2)
    m2 = mem.arm_update(m, P1, 0, reg_of(registry, Triple(7, P1, 0)))
    assert m2.registers == m.registers
    assert mem.poised_target(m2, P1) == 0


def test_two_processes_may_cover_same_register(registry):
    m = initial_memory(2)
    m = mem.arm_update(m, P1, 0, reg_of(registry, Triple(7, P1, 0)))
    m = mem.arm_update(m, P2, 0, reg_of(registry, Triple(9, P2, 0)))
    assert mem.poised_target(m, P1) == 0 and mem.poised_target(m, P2) == 0


def test_double_arm_rejected(registry):
    m = initial_memory(2)
    m = mem.arm_update(m, P1, 0, reg_of(registry, Triple(7, P1, 0)))
    with pytest.raises(MemoryError_):
        mem.arm_update(m, P1, 1, reg_of(registry, Triple(7, P1, 0)))


def test_snapshot_refused_while_poised(registry):
    m = initial_memory(2)
    m = mem.arm_update(m, P1, 0, reg_of(registry, Triple(7, P1, 0)))
    with pytest.raises(MemoryError_):
        mem.snapshot(m, P1)
    # read-only path stays available (used by injected collects)
    assert mem.snapshot_readonly(m) == m.registers


def test_index_out_of_range(registry):
    m = initial_memory(2)
    with pytest.raises(MemoryError_):
        mem.arm_update(m, P1, 2, reg_of(registry, Triple(7, P1, 0)))


def test_fire_without_arm_rejected():
    with pytest.raises(MemoryError_):
        mem.fire_update(initial_memory(1), P1)


def test_fire_is_destructive_whole_register_replacement(registry):
    m = initial_memory(1)
    m = mem.arm_update(m, P2, 0, reg_of(registry, Triple(9, P2, 0)))
    _, _, m = mem.fire_update(m, P2)
    m = mem.arm_update(m, P1, 0, reg_of(registry, Triple(7, P1, 0)))
    _, _, m = mem.fire_update(m, P1)
    assert m.registers[0] == reg_of(registry, Triple(7, P1, 0))
    # P2's triple is gone from the register, not merged
    assert not m.registers[0].bits & (1 << registry.bit_of(Triple(9, P2, 0)))


def test_stale_armed_write_fires_verbatim(registry):
    m = initial_memory(2)
    armed = reg_of(registry, Triple(7, P1, 0))
    m = mem.arm_update(m, P1, 0, armed)
    for i, t in enumerate([Triple(9, P2, 0), Triple(10, P2, 1), Triple(11, P2, 2)]):
        m = mem.arm_update(m, P2, i % 2, reg_of(registry, t))
        _, _, m = mem.fire_update(m, P2)
    _, content, m = mem.fire_update(m, P1)
    assert content == armed and m.registers[0] == armed


def test_block_write_any_order(registry):
    # n-1 = 3 processes armed on registers 0..2 fire in any order: the
    # covered registers end up holding exactly the armed views
    armed = {p: reg_of(registry, Triple(100 + p, p, 0)) for p in (P1, P2, P3)}
    for order in itertools.permutations((P1, P2, P3)):
        m = initial_memory(4)
        for i, p in enumerate((P1, P2, P3)):
            m = mem.arm_update(m, p, i, armed[p])
        for p in order:
            _, _, m = mem.fire_update(m, p)
        assert m.registers[:3] == (armed[P1], armed[P2], armed[P3])
        assert not m.pending


def test_poised_target_lifecycle(registry):
    m = initial_memory(4)
    assert mem.poised_target(m, P1) is None
    m = mem.arm_update(m, P1, 3, reg_of(registry, Triple(7, P1, 0)))
    assert mem.poised_target(m, P1) == 3
    _, _, m = mem.fire_update(m, P1)
    assert mem.poised_target(m, P1) is None


def test_crash_drops_pending(registry):
    m = initial_memory(2)
    m = mem.arm_update(m, P1, 0, reg_of(registry, Triple(7, P1, 0)))
    m = mem.drop_pending(m, P1)
    assert mem.poised_target(m, P1) is None
    assert mem.drop_pending(m, P1) is m  # idempotent


class TestDigest:
    def test_fnv_reference_vectors(self):
        # standard FNV-1a 64 test vectors
        assert fnv1a_64(b"") == 0xCBF29CE484222325
        assert fnv1a_64(b"a") == 0xAF63DC4C8601EC8C
        assert fnv1a_64(b"foobar") == 0x85944171F73967E8

    def test_digest_ignores_insertion_order(self, registry):
        a = reg_of(registry, Triple(7, P1, 0), Triple(9, P2, 3))
        b = reg_of(registry, Triple(9, P2, 3), Triple(7, P1, 0))
        assert registers_digest((a,), registry) == registers_digest((b,), registry)

    def test_digest_depends_on_position(self, registry):
        a = reg_of(registry, Triple(7, P1, 0))
        empty = mem.EMPTY_REG
        assert registers_digest((a, empty), registry) != \
            registers_digest((empty, a), registry)
