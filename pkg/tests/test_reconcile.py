from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from metiblt.config import MetConfig
from metiblt.hashing import FixtureHasher, Hasher
from metiblt.iblt import Cell, Iblt
from metiblt.reconcile import (
    DifferenceIblt,
    SignedDifference,
    StreamingDecoder,
    is_pure,
    modified_recover,
    recovery_order,
    subtract_cells,
)
from oracles import false_pure_rate, hypergraph_peel

MET = MetConfig(m=(9, 13, 17), p=(0.2, 0.3, 0.5), degrees=((1, 2, 1), (3, 0, 2), (1, 1, 3)))
Z1, Z2, Z3, Z4 = 0x1111, 0x2222, 0x3333, 0x4444


def difference_example() -> tuple[DifferenceIblt, FixtureHasher]:
    config = MetConfig(m=(5,), p=(1.0,), degrees=((1,),))
    h = FixtureHasher(config, {Z1: (0, 1), Z2: (0, 2), Z3: (3, 4), Z4: (0, 2, 3)})
    a, b = Iblt(config, h), Iblt(config, h)
    a.insert_values([Z1, Z2, Z3])
    b.insert_values([Z3, Z4])
    return DifferenceIblt.from_iblts(b, a), h


def build(config: MetConfig, set_a, set_b, hasher=None) -> DifferenceIblt:
    a, b = Iblt(config, hasher), Iblt(config, hasher)
    a.insert_values(list(set_a))
    b.insert_values(list(set_b))
    return DifferenceIblt.from_iblts(b, a)


def test_subtraction() -> None:
    c = Cell(3, 0xAB, 0xCD)
    assert subtract_cells(c, c).is_zero()
    assert subtract_cells(Cell(), Cell(1, 5, 6)) == Cell(-1, 5, 6)


def test_difference_example_cells() -> None:
    d, h = difference_example()
    k = h.derive_key
    assert d.cell(0) == Cell(-1, k(Z1) ^ k(Z2) ^ k(Z4), Z1 ^ Z2 ^ Z4)
    assert d.cell(1) == Cell(-1, k(Z1), Z1)
    assert d.cell(2) == Cell(0, k(Z2) ^ k(Z4), Z2 ^ Z4)
    assert d.cell(3) == Cell(1, k(Z4), Z4)
    assert d.cell(4).is_zero()


def test_purity_example() -> None:
    d, h = difference_example()
    assert not is_pure(d.cell(0), h)
    assert is_pure(d.cell(1), h) and is_pure(d.cell(3), h)
    assert not is_pure(d.cell(2), h)


def test_modified_recovery_example() -> None:
    d, h = difference_example()
    diff, ok = modified_recover(d)
    assert ok
    assert {z.value for z in diff.only_in_a} == {Z1, Z2}
    assert {z.value for z in diff.only_in_b} == {Z4}
    order = [(z.value, s) for z, s in recovery_order(d)]
    assert set(order[:2]) == {(Z1, -1), (Z4, 1)}
    assert order[2] == (Z2, -1)


def test_identical_sets_give_empty_difference() -> None:
    d = build(MET, range(50), range(50))
    assert d.counts.sum() == 0 and not d.keys.any()
    diff, ok = modified_recover(d)
    assert ok and len(diff) == 0


def test_protocol_example_prefixes() -> None:
    config = MetConfig(m=(2, 2), p=(1.0,), degrees=((1,), (1,)))
    h = FixtureHasher(config, {Z1: (1, 2), Z4: (1, 3), Z2: (0, 2), Z3: (0, 3)})
    full = build(config, [Z1, Z2, Z3], [Z2, Z3, Z4], h)
    assert full.cell(0).is_zero()
    for i, want in ((1, True), (2, False), (3, True)):
        d = DifferenceIblt(config, h)
        d.append_arrays(full.counts[:i], full.keys[:i], full.values[:i])
        diff, ok = modified_recover(d)
        assert ok is want
    assert {z.value for z in diff.only_in_a} == {Z1}
    assert {z.value for z in diff.only_in_b} == {Z4}


def test_prefix_guards() -> None:
    d = DifferenceIblt(MET)
    with pytest.raises(ValueError):
        modified_recover(d)
    with pytest.raises(IndexError):
        d.cell(0)
    with pytest.raises(ValueError):
        DifferenceIblt.from_iblts(Iblt(MET), Iblt(MET.with_seed(3)))


def test_signed_difference_rejects_overlap() -> None:
    h = Hasher(MET)
    z = h.pair(1)
    with pytest.raises(ValueError):
        SignedDifference(frozenset([z]), frozenset([z]))
    assert SignedDifference(frozenset([z])).swapped().only_in_a == frozenset([z])


@st.composite
def host_sets(draw):
    pool = draw(st.lists(st.integers(0, 2**32 - 1), min_size=0, max_size=60, unique=True))
    roles = draw(st.lists(st.sampled_from("ab="), min_size=len(pool), max_size=len(pool)))
    a = [v for v, r in zip(pool, roles) if r in "a="]
    b = [v for v, r in zip(pool, roles) if r in "b="]
    return a, b


@given(sets=host_sets())
@settings(max_examples=80, deadline=None)
def test_matches_signed_hypergraph_peeling(sets) -> None:
    set_a, set_b = sets
    d = build(MET, set_a, set_b)
    h = d.hasher
    only_a, only_b = set(set_a) - set(set_b), set(set_b) - set(set_a)
    edges = {v: h.index_vector(h.derive_key(v)) for v in only_a | only_b}
    want, want_ok = hypergraph_peel(edges)
    diff, ok = modified_recover(d)
    assert ok == want_ok
    got_a = {z.value for z in diff.only_in_a}
    got_b = {z.value for z in diff.only_in_b}
    assert got_a | got_b == want
    assert got_a <= only_a and got_b <= only_b


@given(sets=host_sets())
@settings(max_examples=50, deadline=None)
def test_swapping_hosts_swaps_the_difference(sets) -> None:
    set_a, set_b = sets
    ab = build(MET, set_a, set_b)
    ba = build(MET, set_b, set_a)
    assert (ab.counts == -ba.counts).all()
    assert (ab.keys == ba.keys).all() and (ab.values == ba.values).all()
    d1, ok1 = modified_recover(ab)
    d2, ok2 = modified_recover(ba)
    assert ok1 == ok2 and d1 == d2.swapped()


@given(sets=host_sets())
@settings(max_examples=50, deadline=None)
def test_streaming_decoder_tracks_every_prefix(sets) -> None:
    set_a, set_b = sets
    full = build(MET, set_a, set_b)
    dec = StreamingDecoder(MET, full.hasher)
    succeeded = False
    for i in range(full.received):
        cell = full.cell(i)
        dec.push(cell.count, cell.key, cell.value)
        ok = dec.decode()
        prefix = DifferenceIblt(MET, full.hasher)
        prefix.append_arrays(full.counts[:i + 1], full.keys[:i + 1], full.values[:i + 1])
        want, want_ok = modified_recover(prefix)
        assert ok == want_ok
        assert dec.difference() == want
        # once every pair is visible (first cell type complete) more cells never hurt
        if i + 1 >= MET.m[0]:
            assert not (succeeded and not ok)
            succeeded |= ok


def test_streaming_decoder_flags_a_pair_seen_twice() -> None:
    config = MetConfig(m=(3,), p=(1.0,), degrees=((1,),))
    h = FixtureHasher(config, {Z1: (0,)})
    dec = StreamingDecoder(config, h)
    k = h.derive_key(Z1)
    dec.push(1, k, Z1)
    dec.push(1, k, Z1)
    assert not dec.decode()
    assert not dec.consistent and not dec.decode()


@pytest.mark.parametrize("nu, n", [(8, 200_000), (16, 1_000_000)])
def test_false_pure_rate(nu, n) -> None:
    h = Hasher(MetConfig(m=(8,), p=(1.0,), degrees=((1,),), nu=nu))
    passed, total = false_pure_rate(h, n, np.random.default_rng(nu))
    rate = passed / total
    p = 2.0**-nu
    assert rate <= 2 * p
    assert abs(passed - total * p) <= 3 * math.sqrt(total * p) + 1
