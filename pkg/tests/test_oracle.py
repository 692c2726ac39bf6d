import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tvprofile.field import DomainMask
from tvprofile.graph import GraphDomain
from tvprofile.oracle import (
    BinaryProfile,
    InstanceTooLarge,
    binary_profile,
    cheeger_exhaustive,
    convex_envelope,
    naive_perimeter,
    random_mask,
)


def mask(rows):
    return DomainMask.from_array(np.array(rows))


def test_single_cell():
    m = mask([[1]])
    assert binary_profile(m, "aniso").as_dict() == {0: 0, 1: 4}
    p = binary_profile(m, "fourfold")
    assert p.entries[1] == pytest.approx(4 * math.sqrt(2))
    h1, cells = cheeger_exhaustive(m, "aniso")
    assert h1 == 4 and len(cells) == 1


def test_domino_and_envelope():
    p = binary_profile(mask([[1], [1]]), "aniso")
    assert p.as_dict() == {0: 0, 1: 4, 2: 6}
    env = convex_envelope(p)
    assert env.vertices == ((0, 0), (2, 6))
    assert env(1) == 3.0 and env.exact_value(1) == Fraction(3)


def test_three_by_three():
    m = DomainMask.from_array(np.ones((3, 3)))
    p = binary_profile(m, "aniso")
    assert p.entries == (0, 4, 6, 8, 8, 10, 10, 12, 12, 12)
    h1, cells = cheeger_exhaustive(m, "aniso", p)
    assert h1 == Fraction(4, 3)
    assert np.array_equal(cells, np.flatnonzero(m.data))
    assert convex_envelope(p).initial_slope == h1


def test_two_blocks_tie_break():
    m = mask([[1, 1, 0, 1, 1], [1, 1, 0, 1, 1]])
    h1, cells = cheeger_exhaustive(m, "aniso")
    assert h1 == 2
    assert len(cells) == 4
    # smallest cardinality wins, then the lexicographically first block
    assert list(cells) == [8, 9, 15, 16]


def test_linear_profile_envelope_identical():
    p = BinaryProfile((0, 2, 4, 6), (0, 1, 3, 7), np.arange(3), "aniso", True)
    assert convex_envelope(p).vertices == ((0, 0), (3, 6))
    assert convex_envelope(p)(np.arange(4)).tolist() == [0, 2, 4, 6]


def test_too_large():
    with pytest.raises(InstanceTooLarge, match="instance too large"):
        binary_profile(DomainMask.from_array(np.ones((1, 23))), "aniso")


@pytest.mark.parametrize("metric", ["aniso", "fourfold"])
@pytest.mark.parametrize("seed", range(3))
def test_lookup_enumeration_matches_naive(metric, seed):
    rng = np.random.default_rng(seed)
    m = random_mask(rng, (4, 4), 10)
    p = binary_profile(m, metric)
    n = p.size
    best = [math.inf] * (n + 1)
    for code in range(1 << n):
        k = bin(code).count("1")
        best[k] = min(best[k], naive_perimeter(m, metric, p.free, code))
    assert np.allclose(best, p.entries, atol=1e-9)
    for k in range(n + 1):
        assert naive_perimeter(m, metric, p.free, p.minimizers[k]) == pytest.approx(p.entries[k], abs=1e-9)
        assert bin(p.minimizers[k]).count("1") == k


@given(arrays(np.bool_, (3, 4)).filter(lambda a: 0 < a.sum() <= 12))
def test_envelope_below_profile_and_convex(a):
    m = DomainMask.from_array(a)
    for metric in ("aniso", "fourfold"):
        p = binary_profile(m, metric)
        env = convex_envelope(p)
        ks = np.arange(p.size + 1)
        vals = env(ks)
        assert np.all(vals <= np.array(p.entries, dtype=float) + 1e-9)
        assert np.all(np.diff(vals, 2) >= -1e-9)
        assert p.entries[0] == 0


def test_exact_cheeger_matches_envelope_slope_random():
    rng = np.random.default_rng(9)
    for _ in range(5):
        m = random_mask(rng, (4, 4), 8)
        p = binary_profile(m, "aniso")
        h1, _ = cheeger_exhaustive(m, "aniso", p)
        assert convex_envelope(p).initial_slope == h1


def test_graph_profile_entries():
    # triangle 0-1-2 plus a pendant 3 attached to 2; district {0, 1, 2}
    g = GraphDomain(4, [(0, 1), (1, 2), (0, 2), (2, 3)], [0, 1, 2])
    p = binary_profile(g)
    assert p.entries == (0, 2, 2, 1)
    h1, cells = cheeger_exhaustive(g)
    assert h1 == Fraction(1, 3) and list(cells) == [0, 1, 2]


def test_full_domain_entry_is_boundary():
    rng = np.random.default_rng(2)
    m = random_mask(rng, (4, 4), 9)
    from tvprofile.field import GradientStencil, tv

    p = binary_profile(m, "aniso")
    assert p.entries[-1] == tv(m, GradientStencil("aniso"))
