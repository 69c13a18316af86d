import itertools
from fractions import Fraction

import numpy as np
import pytest

from fermichain.trees import (TreeError, all_assignments, bound_product, check_identities,
                              count_trees, crossover_consistency, endpoint_gain_ok,
                              enumerate_trees, label_endpoints, random_assignment,
                              short_memory, topology_counts, tree_count_growth, validate, vertex_dimension)

G = 2.0


def hand_n1(k):
    return 1 if k == 1 else 1 + hand_n1(k + 1)


def hand_n2(k):
    return 0 if k == 1 else hand_n2(k + 1) + hand_n1(k + 1) ** 2


def test_single_endpoint_chains():
    for h in (-1, -2, -5):
        trees = enumerate_trees(h, 1)
        # one chain per scale at which the endpoint sits
        assert len(trees) == 1 - h == hand_n1(h + 1)
        assert sorted(max(t.scale) for t in trees) == list(range(h + 1, 2))


@pytest.mark.parametrize("h", [-1, -2, -3])
def test_two_endpoint_counts(h):
    assert len(enumerate_trees(h, 2)) == hand_n2(h + 1) == count_trees(h, 2)


def test_counts_match_memo():
    for h in (-1, -2, -3):
        for n in range(1, 5):
            assert len(enumerate_trees(h, n)) == count_trees(h, n)


def test_limits():
    with pytest.raises(TreeError):
        enumerate_trees(-2, 6)
    with pytest.raises(TreeError):
        enumerate_trees(-9, 2)


def test_count_growth():
    # scale-free topologies: little Schroeder numbers, C independent of depth
    assert topology_counts(-4) == [1, 1, 3, 11, 45]
    assert tree_count_growth(-4, scale_labels=False) == pytest.approx(
        tree_count_growth(-5, scale_labels=False))
    # with scale labels C grows with the depth
    assert tree_count_growth(-3) < tree_count_growth(-8)


def test_chain_identity():
    t = label_endpoints(enumerate_trees(-3, 1)[-1], [4])
    t.P = [t.fields(t.endpoints[0])] * len(t.scale)
    ok, w = check_identities(t)
    assert ok and w["fields"] == (0, 0)


def _labelled(h, n, sizes=(2, 4)):
    for t in enumerate_trees(h, n):
        for sz in itertools.product(sizes, repeat=n):
            yield label_endpoints(t, sz)


@pytest.mark.parametrize("h, n", [(-1, 1), (-1, 2), (-1, 3), (-2, 1), (-2, 2)])
def test_exhaustive_identities_and_dimensions(h, n):
    count = 0
    for t in _labelled(h, n):
        for P in all_assignments(t):
            t.P = P
            ok, w = check_identities(t)
            assert ok, w
            rep = bound_product(t, 1, G)
            assert rep.collected_ok and rep.positivity_ok
            assert endpoint_gain_ok(t)
            left, right = short_memory(t)
            assert left <= right
            count += 1
    assert count > 0


def test_random_assignments_n4():
    rng = np.random.default_rng(0)
    done = 0
    for t in itertools.chain(_labelled(-2, 4), _labelled(-2, 4)):
        if done >= 1000:
            break
        t.P = random_assignment(t, rng)
        assert check_identities(t)[0]
        assert bound_product(t, 1, G).collected_ok
        done += 1
    assert done == 1000


def test_single_endpoint_product():
    for size in (2, 4, 6, 8):
        t = label_endpoints(enumerate_trees(-3, 1)[0], [size])
        t.P = [t.fields(t.endpoints[0])]
        rep = bound_product(t, 1, G)
        assert rep.value == pytest.approx(G ** float(rep.raw_exponent))
        assert rep.raw_exponent == sum(rep.endpoint_exponents) + rep.root_exponent


def test_regime2_vf_telescoping():
    rng = np.random.default_rng(1)
    classes = ["R", "lam", "nu", "delta"]
    for t in _labelled(-2, 3, sizes=(2, 4)):
        cl = ["lam" if t.size[e] == 4 and rng.random() < 0.5 else
              ("R" if t.size[e] == 4 else classes[int(rng.integers(0, 4))])
              for e in t.endpoints]
        t2 = label_endpoints(t, [t.size[e] for e in t.endpoints], cl)
        t2.P = random_assignment(t2, rng)
        rep = bound_product(t2, 2, G, v_f=0.1)
        assert rep.collected_ok and rep.positivity_ok


def test_vertex_dimensions():
    assert vertex_dimension(1, 2) == Fraction(1, 2)
    assert vertex_dimension(1, 8) == Fraction(1, 2)
    assert vertex_dimension(2, 4) == 1
    assert min(vertex_dimension(1, p) for p in range(2, 40, 2)) == Fraction(1, 2)
    assert min(vertex_dimension(2, p) for p in range(2, 40, 2)) == 1
    with pytest.raises(TreeError):
        vertex_dimension(1, 3)


def test_validate_rejects():
    t = label_endpoints(enumerate_trees(-2, 2)[-1], [2, 2])
    t.P = [frozenset()] * len(t.scale)
    with pytest.raises(TreeError):
        validate(t)


def test_crossover_consistency():
    for r in [2.0**-k for k in range(3, 11)]:
        for l in (2, 4, 6):
            assert G**-2 <= crossover_consistency(l, r, G) <= G**2
    assert crossover_consistency(2, 2**-6, G) == pytest.approx(1.0)
