import pytest
from hypothesis import given, strategies as st

from swmr_forge.core import (MalformedViewError, Triple, latest_per_process,
                             merge_views, occurrence_count)

P1, P2 = 1, 2


def v(*triples):
    return frozenset(triples)


class TestMergeViews:
    def test_identity(self):
        assert merge_views(v(), v(Triple(7, P1, 0))) == v(Triple(7, P1, 0))

    def test_idempotence(self):
        a = v(Triple(7, P1, 0))
        assert merge_views(a, a) == a

    def test_disjoint_union(self):
        got = merge_views(v(Triple(7, P1, 0)), v(Triple(9, P2, 0)))
        assert got == v(Triple(7, P1, 0), Triple(9, P2, 0))


class TestLatestPerProcess:
    def test_larger_counter_wins(self):
        got = latest_per_process(v(Triple(7, P1, 0), Triple(8, P1, 1)))
        assert got == {P1: Triple(8, P1, 1)}

    def test_empty(self):
        assert latest_per_process(v()) == {}

    def test_max_per_key(self):
        got = latest_per_process(
            v(Triple(7, P1, 0), Triple(9, P2, 3), Triple(4, P2, 1)))
        assert got == {P1: Triple(7, P1, 0), P2: Triple(9, P2, 3)}

    def test_malformed_view_rejected(self):
        bad = v(Triple(7, P1, 0), Triple(8, P1, 0))
        with pytest.raises(MalformedViewError):
            latest_per_process(bad)


class TestOccurrenceCount:
    def test_absent(self):
        assert occurrence_count([v(), v()], Triple(7, P1, 0)) == 0

    def test_direct_count(self):
        t = Triple(7, P1, 0)
        regs = [v(t), v(), v(t), v(t), v()]
        assert occurrence_count(regs, t) == 3

    def test_everywhere(self):
        t = Triple(7, P1, 0)
        assert occurrence_count([v(t)] * 4, t) == 4


triples = st.builds(Triple,
                    value=st.integers(0, 5),
                    writer=st.integers(1, 3),
                    counter=st.integers(0, 3))
views = st.frozensets(triples, max_size=8)


@given(views, views, views)
def test_merge_is_join_semilattice(a, b, c):
    assert merge_views(a, merge_views(b, c)) == merge_views(merge_views(a, b), c)
    assert merge_views(a, b) == merge_views(b, a)
    assert merge_views(a, a) == a
    assert merge_views(a, b) >= a and merge_views(a, b) >= b


@given(views, views)
def test_latest_of_merge_takes_counter_max(a, b):
    merged = merge_views(a, b)
    try:
        la, lb, lm = latest_per_process(a), latest_per_process(b), latest_per_process(merged)
    except MalformedViewError:
        return  # generated garbage view; rejection is the contract
    for p in set(la) & set(lb):
        assert lm[p].counter == max(la[p].counter, lb[p].counter)


@given(st.lists(views, min_size=1, max_size=5), triples, st.data())
def test_occurrence_count_monotone(regs, t, data):
    base = occurrence_count(regs, t)
    i = data.draw(st.integers(0, len(regs) - 1))
    with_t = list(regs)
    with_t[i] = with_t[i] | {t}
    assert occurrence_count(with_t, t) >= base
    other = data.draw(triples.filter(lambda o: o != t))
    noisy = [r | {other} for r in regs]
    assert occurrence_count(noisy, t) == base
