"""Gaussian Grassmann expectations, truncated expectations and Gram bounds.

A field is a pair ``(sign, point)`` with ``sign`` in ``{-1, +1}`` (``psi^-`` and
``psi^+``) and ``point`` any hashable label.  A monomial is an ordered list of
fields.  The propagator ``g(a, b)`` is the contraction of ``psi^-_a`` with
``psi^+_b``; the normalisation is

    E(psi^-_{a1} psi^+_{b1} ... psi^-_{an} psi^+_{bn}) = det[g(a_i, b_j)].

Any other ordering is first brought to this pair-ordered form, with the sign
of the reordering.  Within a cluster the canonical input order is all
``psi^-`` followed by all ``psi^+``; :func:`normalize` produces it.
"""
from __future__ import annotations

import itertools
import math

import numpy as np

from .scales import denominator, regime1_grid

MAX_CLUSTERS = 4
MAX_FIELDS = 10


class SizeLimitError(ValueError):
    """Input exceeds the desk-scale limits of the exact enumerations."""


def _parity(seq):
    """Sign of the permutation that sorts ``seq`` (distinct entries)."""
    seq = list(seq)
    inv = 0
    for i in range(len(seq)):
        for j in range(i + 1, len(seq)):
            if seq[i] > seq[j]:
                inv += 1
    return -1 if inv % 2 else 1


def normalize(monomial):
    """Reorder to all ``psi^-`` then all ``psi^+``; return ``(sign, fields)``."""
    order = ([i for i, f in enumerate(monomial) if f[0] < 0]
             + [i for i, f in enumerate(monomial) if f[0] > 0])
    return _parity(order), [monomial[i] for i in order]


def wick_moment(monomial, g):
    """``E(monomial)`` as a determinant; 0 when the numbers of ``psi^+`` and ``psi^-`` differ."""
    minus = [i for i, f in enumerate(monomial) if f[0] < 0]
    plus = [i for i, f in enumerate(monomial) if f[0] > 0]
    if len(minus) != len(plus):
        return 0.0
    if not minus:
        return 1.0
    # bring to pair order psi^-_1 psi^+_1 psi^-_2 psi^+_2 ...
    order = [p for pair in zip(minus, plus) for p in pair]
    sign = _parity(order)
    mat = np.array([[g(monomial[i][1], monomial[j][1]) for j in plus] for i in minus])
    return sign * np.linalg.det(mat)


def _check_limits(clusters):
    if len(clusters) > MAX_CLUSTERS or sum(len(c) for c in clusters) > MAX_FIELDS:
        raise SizeLimitError(
            f"at most {MAX_CLUSTERS} clusters and {MAX_FIELDS} fields are supported")


def set_partitions(items):
    """All set partitions of ``items`` (a list), blocks in first-appearance order."""
    items = list(items)
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in set_partitions(rest):
        yield [[first]] + part
        for i in range(len(part)):
            yield part[:i] + [[first] + part[i]] + part[i + 1:]


def _block_sign(clusters, blocks):
    """Sign of reordering ``P_1 ... P_s`` into the block concatenation."""
    order = [i for b in blocks for i in sorted(b)]
    odd = [i for i in order if len(clusters[i]) % 2]
    return _parity(odd)


def truncated_expectation_cumulant(clusters, g):
    """``E^T(P_1, ..., P_s)`` by Moebius inversion over set partitions.

    ``E^T = sum_pi (-1)^(|pi|-1) (|pi|-1)! eps(pi) prod_B E(prod_{i in B} P_i)``
    where ``eps(pi)`` is the Grassmann sign of regrouping the clusters.
    """
    _check_limits(clusters)
    s = len(clusters)
    total = 0.0
    for blocks in set_partitions(range(s)):
        m = len(blocks)
        term = (-1) ** (m - 1) * math.factorial(m - 1) * _block_sign(clusters, blocks)
        for b in blocks:
            mono = [f for i in sorted(b) for f in clusters[i]]
            term = term * wick_moment(mono, g)
            if term == 0:
                break
        total += term
    return total


def _connected(edges, s):
    seen = {0}
    stack = [0]
    adj = {i: set() for i in range(s)}
    for a, b in edges:
        adj[a].add(b)
        adj[b].add(a)
    while stack:
        v = stack.pop()
        for w in adj[v] - seen:
            seen.add(w)
            stack.append(w)
    return len(seen) == s


def connected_contractions(clusters, g):
    """Signed sum over complete Wick pairings whose cluster graph is connected."""
    _check_limits(clusters)
    fields = [f for c in clusters for f in c]
    owner = [ci for ci, c in enumerate(clusters) for _ in c]
    minus = [i for i, f in enumerate(fields) if f[0] < 0]
    plus = [i for i, f in enumerate(fields) if f[0] > 0]
    if len(minus) != len(plus):
        return 0.0
    s = len(clusters)
    total = 0.0
    for perm in itertools.permutations(plus):
        edges = [(owner[i], owner[j]) for i, j in zip(minus, perm) if owner[i] != owner[j]]
        if not _connected(edges, s):
            continue
        order = [p for pair in zip(minus, perm) for p in pair]
        val = _parity(order)
        for i, j in zip(minus, perm):
            val *= g(fields[i][1], fields[j][1])
        total += val
    return total


def cluster_configurations(max_clusters=3, max_fields=8):
    """Every balanced field string of length <= ``max_fields`` cut into <= ``max_clusters`` clusters.

    Points are the field positions, so all fields are distinct.
    """
    for n in range(2, max_fields + 1, 2):
        for signs in itertools.product((-1, 1), repeat=n):
            if sum(signs) != 0:
                continue
            fields = [(sg, i) for i, sg in enumerate(signs)]
            for s in range(1, max_clusters + 1):
                for cuts in itertools.combinations(range(1, n), s - 1):
                    bounds = (0,) + cuts + (n,)
                    yield [fields[bounds[i]:bounds[i + 1]] for i in range(s)]


def lookup_propagator(points, rng):
    """Random propagator on a finite point set, as a closure over a lookup table."""
    table = {(a, b): complex(rng.normal(), rng.normal()) for a in points for b in points}
    return lambda a, b: table[(a, b)]


# ---------------------------------------------------------------- Gram representation

class GramFactors:
    """Vectors ``A_x``, ``B_y`` with ``(A_x, B_y) = g^(h)(x - y)``.

    Built from ``f/D = (sqrt(f) sqrt|D| / D) (sqrt(f) / sqrt|D|)`` on the mode
    grid of the regime-1 single-scale propagator.  The inner product is the
    sesquilinear ``sum conj(u) v``.
    """

    def __init__(self, h, r, gamma, res=1.0):
        self.h = h
        grid = regime1_grid(h, r, gamma, res=res)
        vol = grid.beta_eff * grid.L_eff
        d = denominator(grid.k0, grid.k, r, gamma, h)
        f = (-grid.weights * vol * d).real
        f = np.clip(f, 0.0, None)
        ad = np.abs(d)
        self.grid = grid
        self._a = -np.conj(np.sqrt(f) * np.sqrt(ad) / d) / math.sqrt(vol)
        self._b = np.sqrt(f) / np.sqrt(ad) / math.sqrt(vol)
        self.norm_a = float(np.sqrt(np.sum(np.abs(self._a) ** 2)))
        self.norm_b = float(np.sqrt(np.sum(np.abs(self._b) ** 2)))

    def a(self, x):
        x0, x1 = x
        return np.conj(np.exp(1j * (self.grid.k0 * x0 + self.grid.k * x1))) * self._a

    def b(self, y):
        y0, y1 = y
        return np.exp(-1j * (self.grid.k0 * y0 + self.grid.k * y1)) * self._b

    def propagator(self, x, y):
        return complex(self.grid.evaluate(x[0] - y[0], x[1] - y[1]))


def gram_check(factors: GramFactors, minus_pts, plus_pts, units_minus, units_plus, tol=1e-10):
    """Gram representation and Hadamard bound for one determinant.

    ``minus_pts[i]``/``plus_pts[j]`` are spacetime points; ``units_*`` are unit
    vectors so that ``t_ij = u_i . u_j``.  Returns a report dict with the
    maximal representation error, ``|det|`` and the Hadamard product.
    """
    ua = np.asarray(units_minus, dtype=float)
    ub = np.asarray(units_plus, dtype=float)
    av = [np.kron(factors.a(x), u) for x, u in zip(minus_pts, ua)]
    bv = [np.kron(factors.b(y), u) for y, u in zip(plus_pts, ub)]
    gram = np.array([[np.vdot(a, b) for b in bv] for a in av])
    direct = np.array([[float(np.dot(u, w)) * factors.propagator(x, y)
                        for y, w in zip(plus_pts, ub)] for x, u in zip(minus_pts, ua)])
    err = float(np.abs(gram - direct).max()) if gram.size else 0.0
    det = abs(np.linalg.det(gram)) if gram.size else 1.0
    hadamard = 1.0
    for a, b in zip(av, bv):
        hadamard *= np.linalg.norm(a) * np.linalg.norm(b)
    return {
        "representation_error": err,
        "abs_det": float(det),
        "hadamard": float(hadamard),
        "holds": bool(det <= hadamard * (1 + 1e-12)),
        "representation_ok": bool(err <= tol * max(1.0, float(np.abs(direct).max()))),
        "norm_product": factors.norm_a * factors.norm_b,
    }


def random_units(n, dim, rng):
    v = rng.normal(size=(n, dim))
    return v / np.linalg.norm(v, axis=1, keepdims=True)
