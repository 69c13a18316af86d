import itertools
import math

import numpy as np
import pytest

from fermichain.grassmann import (GramFactors, cluster_configurations, SizeLimitError, connected_contractions,
                                  gram_check, lookup_propagator, normalize, random_units,
                                  set_partitions, truncated_expectation_cumulant,
                                  wick_moment)


def perm_sum_oracle(monomial, g):
    # plain signed sum over bijections minus -> plus in pair order
    minus = [i for i, f in enumerate(monomial) if f[0] < 0]
    plus = [i for i, f in enumerate(monomial) if f[0] > 0]
    total = 0.0
    for p in itertools.permutations(range(len(plus))):
        inv = sum(1 for a in range(len(p)) for b in range(a + 1, len(p)) if p[a] > p[b])
        term = (-1) ** inv
        for i, j in zip(range(len(minus)), p):
            term *= g(monomial[minus[i]][1], monomial[plus[j]][1])
        total += term
    order = [q for pair in zip(minus, plus) for q in pair]
    inv = sum(1 for a in range(len(order)) for b in range(a + 1, len(order)) if order[a] > order[b])
    return (-1) ** inv * total


@pytest.fixture
def g():
    return lookup_propagator(range(20), np.random.default_rng(3))


def test_small_moments(g):
    assert wick_moment([(-1, 0), (1, 1)], g) == pytest.approx(g(0, 1))
    m = [(-1, 0), (1, 1), (-1, 2), (1, 3)]
    assert wick_moment(m, g) == pytest.approx(g(0, 1) * g(2, 3) - g(0, 3) * g(2, 1))
    assert wick_moment([(-1, 0), (1, 1), (1, 2)], g) == 0.0


def test_four_by_four_against_permutation_sum(g):
    m = [(-1, 0), (-1, 1), (1, 2), (-1, 3), (1, 4), (1, 5), (-1, 6), (1, 7)]
    assert wick_moment(m, g) == pytest.approx(perm_sum_oracle(m, g), abs=1e-12)


def test_antisymmetry(g):
    m = [(-1, 0), (1, 1), (-1, 2), (1, 3), (-1, 4), (1, 5)]
    swapped = [m[2], m[1], m[0], m[3], m[4], m[5]]
    assert wick_moment(swapped, g) == pytest.approx(-wick_moment(m, g))
    s, n = normalize(m)
    assert s * wick_moment(n, g) == pytest.approx(wick_moment(m, g))


def test_set_partition_counts():
    bell = [1, 1, 2, 5, 15, 52]
    for n, b in enumerate(bell):
        assert sum(1 for _ in set_partitions(range(n))) == b


def test_cumulant_examples(g):
    c = [(-1, 0), (1, 1), (-1, 2), (1, 3)]
    assert truncated_expectation_cumulant([c], g) == pytest.approx(wick_moment(c, g))
    local = lambda a, b: g(a, b) if (a < 10) == (b < 10) else 0.0
    c1, c2 = [(-1, 0), (1, 1)], [(-1, 12), (1, 13)]
    assert truncated_expectation_cumulant([c1, c2], local) == pytest.approx(0.0, abs=1e-15)
    # two pairs: only the two crossing contractions survive
    hand = -g(0, 13) * g(12, 1)
    assert truncated_expectation_cumulant([c1, c2], g) == pytest.approx(hand)
    assert connected_contractions([c1, c2], g) == pytest.approx(hand)
    assert connected_contractions([c1, c2], local) == 0.0


def test_oracle_equivalence_exhaustive():
    g = lookup_propagator(range(8), np.random.default_rng(11))
    count = 0
    worst = 0.0
    for clusters in cluster_configurations():
        a = truncated_expectation_cumulant(clusters, g)
        b = connected_contractions(clusters, g)
        worst = max(worst, abs(a - b))
        count += 1
    assert count > 2000
    assert worst <= 1e-10


def test_size_limits(g):
    with pytest.raises(SizeLimitError):
        truncated_expectation_cumulant([[(-1, i), (1, i + 10)] for i in range(5)], g)


def test_gram_single_cluster_reproduces_propagator():
    gf = GramFactors(-3, 0.0, 2.0)
    pts_m = [(0.0, 0), (3.0, 1)]
    pts_p = [(1.5, -2), (-4.0, 3)]
    u = np.ones((2, 1))
    rep = gram_check(gf, pts_m, pts_p, u, u)
    assert rep["representation_ok"] and rep["holds"]


def test_gram_hadamard_random():
    rng = np.random.default_rng(5)
    gf = GramFactors(-4, 0.0, 2.0)
    bad = 0
    for _ in range(1000):
        n = int(rng.integers(1, 6))
        pm = [(rng.uniform(-60, 60), int(rng.integers(-8, 9))) for _ in range(n)]
        pp = [(rng.uniform(-60, 60), int(rng.integers(-8, 9))) for _ in range(n)]
        um = random_units(n, 3, rng)
        up = random_units(n, 3, rng)
        rep = gram_check(gf, pm, pp, um, up)
        bad += (not rep["holds"]) or (not rep["representation_ok"])
    assert bad == 0


def test_gram_norm_scaling():
    vals = [GramFactors(h, 0.0, 2.0).norm_a * GramFactors(h, 0.0, 2.0).norm_b / 2.0 ** (h / 2)
            for h in range(-2, -8, -1)]
    assert max(vals) / min(vals) < 2.0
