"""Scale-labelled trees and exact dimension bookkeeping.

A tree hangs from a root at scale ``h``; its first node sits at ``h + 1``.
Every non-endpoint vertex at scale ``k <= 0`` has an ordered list of children
at scale ``k + 1``, each either another vertex (scale ``<= 0``) or an endpoint
(scale ``<= 1``).  Vertices with a single child are allowed, so every branch
passes through all intermediate scales.

Fields are labelled ``(endpoint, slot, sign)``.  An endpoint with ``|I| = 2m``
carries ``m`` fields of each sign.  Exponents of ``gamma`` and ``v_F`` are
kept as :class:`fractions.Fraction` throughout.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache

MAX_N = 5
MAX_DEPTH = 8


class TreeError(ValueError):
    """Malformed tree or field assignment; the message names the violated rule."""


@dataclass
class GNTree:
    """Flat storage of one tree.

    ``parent[i]`` is ``-1`` for the top node.  ``size[i]`` is ``|I_v|`` for
    endpoints and 0 otherwise; ``cls[i]`` is the endpoint class
    (``"R"``, ``"lam"``, ``"nu"``, ``"delta"`` or ``""``).
    """

    h: int
    scale: list
    parent: list
    endpoint: list
    size: list = field(default_factory=list)
    cls: list = field(default_factory=list)
    P: list | None = None

    @property
    def nodes(self):
        return range(len(self.scale))

    def children(self, v):
        return [i for i in self.nodes if self.parent[i] == v]

    def parent_scale(self, v):
        p = self.parent[v]
        return self.h if p < 0 else self.scale[p]

    @property
    def vertices(self):
        return [v for v in self.nodes if not self.endpoint[v]]

    @property
    def endpoints(self):
        return [v for v in self.nodes if self.endpoint[v]]

    @property
    def n(self):
        return len(self.endpoints)

    def endpoints_below(self, v):
        if self.endpoint[v]:
            return [v]
        return [e for c in self.children(v) for e in self.endpoints_below(c)]

    def I(self, v):
        return sum(self.size[e] for e in self.endpoints_below(v))

    def fields(self, v):
        out = []
        for e in self.endpoints_below(v):
            m = self.size[e] // 2
            out += [(e, j, -1) for j in range(m)] + [(e, j, 1) for j in range(m)]
        return frozenset(out)

    def highest_endpoint_parent(self):
        return max(self.parent_scale(e) for e in self.endpoints)

    def to_dict(self):
        return {
            "h": self.h, "scale": self.scale, "parent": self.parent,
            "endpoint": self.endpoint, "size": self.size, "cls": self.cls,
            "P": None if self.P is None else [sorted(p) for p in self.P],
        }


# ---------------------------------------------------------------- enumeration

def _check_limits(h_root, n):
    if n < 1 or n > MAX_N:
        raise TreeError(f"n must lie in 1..{MAX_N}, got {n}")
    if h_root > 0 or -h_root > MAX_DEPTH:
        raise TreeError(f"root scale must lie in -{MAX_DEPTH}..0, got {h_root}")


def _compositions(n, parts):
    if parts == 1:
        yield (n,)
        return
    for first in range(1, n - parts + 2):
        for rest in _compositions(n - first, parts - 1):
            yield (first,) + rest


def _shapes(k, n):
    """Nested shapes rooted at a node on scale ``k`` with ``n`` endpoints.

    A shape is ``("e",)`` for an endpoint or ``("v", child shapes)``.
    """
    out = []
    if n == 1 and k <= 1:
        out.append(("e",))
    if k <= 0:
        for s in range(1, n + 1):
            for comp in _compositions(n, s):
                options = [_shapes(k + 1, m) for m in comp]
                for kids in itertools.product(*options):
                    out.append(("v", kids))
    return out


@lru_cache(maxsize=None)
def count_trees(h_root, n):
    """Number of shapes with root on ``h_root`` and ``n`` endpoints (memoised)."""
    @lru_cache(maxsize=None)
    def c(k, m):
        tot = 1 if (m == 1 and k <= 1) else 0
        if k <= 0:
            for s in range(1, m + 1):
                for comp in _compositions(m, s):
                    p = 1
                    for part in comp:
                        p *= c(k + 1, part)
                    tot += p
        return tot
    return c(h_root + 1, n)


def _flatten(shape, k, parent, tree):
    idx = len(tree.scale)
    tree.scale.append(k)
    tree.parent.append(parent)
    tree.endpoint.append(shape[0] == "e")
    tree.size.append(0)
    tree.cls.append("")
    if shape[0] == "v":
        for kid in shape[1]:
            _flatten(kid, k + 1, idx, tree)


def enumerate_trees(h_root, n):
    """All scale-labelled tree shapes; endpoint sizes are left at 0."""
    _check_limits(h_root, n)
    trees = []
    for shape in _shapes(h_root + 1, n):
        t = GNTree(h_root, [], [], [])
        _flatten(shape, h_root + 1, -1, t)
        trees.append(t)
    return trees


def label_endpoints(tree, sizes, classes=None):
    """Copy of ``tree`` with endpoint sizes (and classes) in endpoint order."""
    t = GNTree(tree.h, list(tree.scale), list(tree.parent), list(tree.endpoint),
               list(tree.size), list(tree.cls))
    eps = t.endpoints
    if len(sizes) != len(eps):
        raise TreeError("one size per endpoint required")
    for i, e in enumerate(eps):
        if sizes[i] < 2 or sizes[i] % 2:
            raise TreeError(f"endpoint size must be even and >= 2, got {sizes[i]}")
        t.size[e] = sizes[i]
        t.cls[e] = "" if classes is None else classes[i]
    return t


# ---------------------------------------------------------------- field assignments

def _balanced(fs):
    return sum(f[2] for f in fs) == 0


def _vertex_ok(t, v, Pv, kidsP):
    s = len(kidsP)
    union = frozenset().union(*kidsP)
    if not Pv <= union:
        return "P_v must be contained in the union of the children's P"
    if not Pv:
        return "P_v must be nonempty"
    if not _balanced(Pv):
        return "P_v must be balanced"
    internal = union - Pv
    if not _balanced(internal):
        return "internal fields must be balanced"
    if s > 1:
        if any(not (p - Pv) for p in kidsP):
            return "each child cluster needs an internal field"
        if len(internal) < 2 * (s - 1):
            return "too few internal fields to connect the clusters"
    return None


def validate(t):
    """Raise :class:`TreeError` unless ``t`` satisfies every structural rule."""
    for v in t.nodes:
        if t.scale[v] <= t.parent_scale(v):
            raise TreeError(f"scale labels must increase leafward at node {v}")
        if t.scale[v] != t.parent_scale(v) + 1:
            raise TreeError(f"node {v} must sit one scale above its parent")
        if t.endpoint[v]:
            if t.scale[v] > 1:
                raise TreeError(f"endpoint {v} above scale 1")
            if t.size[v] < 2 or t.size[v] % 2:
                raise TreeError(f"endpoint {v} has invalid |I_v|={t.size[v]}")
        else:
            if t.scale[v] > 0:
                raise TreeError(f"vertex {v} above scale 0")
            if not t.children(v):
                raise TreeError(f"vertex {v} has no children")
    if t.P is None:
        return
    for v in t.nodes:
        if t.endpoint[v]:
            if t.P[v] != t.fields(v):
                raise TreeError(f"endpoint {v} must have P_v = I_v")
        else:
            msg = _vertex_ok(t, v, t.P[v], [t.P[c] for c in t.children(v)])
            if msg:
                raise TreeError(f"vertex {v}: {msg}")


def _balanced_subsets(union):
    minus = sorted(f for f in union if f[2] < 0)
    plus = sorted(f for f in union if f[2] > 0)
    for k in range(1, min(len(minus), len(plus)) + 1):
        for a in itertools.combinations(minus, k):
            for b in itertools.combinations(plus, k):
                yield frozenset(a + b)


def all_assignments(t):
    """Every valid ``P`` assignment of an endpoint-labelled tree (small trees only)."""
    def rec(v):
        if t.endpoint[v]:
            return [{v: t.fields(v)}]
        kids = t.children(v)
        out = []
        for combo in itertools.product(*[rec(c) for c in kids]):
            merged = {}
            for d in combo:
                merged.update(d)
            kidsP = [merged[c] for c in kids]
            union = frozenset().union(*kidsP)
            for Pv in _balanced_subsets(union):
                if _vertex_ok(t, v, Pv, kidsP) is None:
                    d = dict(merged)
                    d[v] = Pv
                    out.append(d)
        return out
    top = [v for v in t.nodes if t.parent[v] < 0][0]
    for d in rec(top):
        yield [d[v] for v in t.nodes]


def random_assignment(t, rng, tries=2000):
    """Uniform-per-vertex random balanced subsets, with rejection."""
    for _ in range(tries):
        P = [None] * len(t.scale)
        ok = True
        for v in sorted(t.nodes, key=lambda i: -t.scale[i]):
            if t.endpoint[v]:
                P[v] = t.fields(v)
                continue
            kidsP = [P[c] for c in t.children(v)]
            union = sorted(frozenset().union(*kidsP))
            minus = [f for f in union if f[2] < 0]
            plus = [f for f in union if f[2] > 0]
            k = int(rng.integers(1, len(minus) + 1))
            a = [minus[i] for i in rng.choice(len(minus), k, replace=False)]
            b = [plus[i] for i in rng.choice(len(plus), k, replace=False)]
            Pv = frozenset(a + b)
            if _vertex_ok(t, v, Pv, kidsP) is not None:
                ok = False
                break
            P[v] = Pv
        if ok:
            return P
    raise TreeError("no valid assignment found by rejection sampling")


# ---------------------------------------------------------------- identities

def _psize(t, v):
    return len(t.P[v])


def _sum_children_P(t, v):
    return sum(_psize(t, c) for c in t.children(v))


def check_identities(t):
    """Check the telescoping identities in integer arithmetic.

    Returns ``(ok, witnesses)`` where ``witnesses`` maps identity name to the
    two integer sides.
    """
    validate(t)
    if t.P is None:
        raise TreeError("tree has no field assignment")
    h = t.h
    top = [v for v in t.nodes if t.parent[v] < 0][0]
    V = t.vertices
    E = t.endpoints
    hp = t.parent_scale
    w = {}
    w["fields"] = (sum(_sum_children_P(t, v) - _psize(t, v) for v in V),
                   t.I(top) - _psize(t, top))
    w["branching"] = (sum(len(t.children(v)) - 1 for v in V), t.n - 1)
    w["fields_scaled"] = (
        sum((t.scale[v] - h) * (_sum_children_P(t, v) - _psize(t, v)) for v in V),
        sum((t.scale[v] - hp(v)) * (t.I(v) - _psize(t, v)) for v in V))
    w["branching_scaled"] = (
        sum((t.scale[v] - h) * (len(t.children(v)) - 1) for v in V),
        sum((t.scale[v] - hp(v)) * (len(t.endpoints_below(v)) - 1) for v in V))
    # exponents of gamma in the two product identities (all nodes on the
    # path, endpoints included, contribute their scale jump)
    w["endpoint_count"] = (
        h * t.n + sum((t.scale[v] - hp(v)) * len(t.endpoints_below(v)) for v in V),
        sum(hp(e) for e in E))
    w["endpoint_fields"] = (
        h * t.I(top) + sum((t.scale[v] - hp(v)) * t.I(v) for v in V),
        sum(hp(e) * t.size[e] for e in E))
    ok = all(a == b for a, b in w.values())
    return ok, w


# ---------------------------------------------------------------- dimensions

def z1(p):
    return {2: Fraction(3, 2), 4: Fraction(1), 6: Fraction(2)}.get(p, Fraction(0))


def z2(p):
    return {2: Fraction(2), 4: Fraction(1)}.get(p, Fraction(0))


def vertex_dimension(regime, p_size, z_applied=True):
    """Renormalised dimension; the vertex factor is ``gamma^(-(h_v - h_v') D)``."""
    if p_size < 2 or p_size % 2:
        raise TreeError(f"|P_v| must be even and >= 2, got {p_size}")
    if regime == 1:
        return Fraction(p_size, 4) - Fraction(3, 2) + (z1(p_size) if z_applied else 0)
    if regime == 2:
        return Fraction(p_size, 2) - 2 + (z2(p_size) if z_applied else 0)
    raise ValueError("regime must be 1 or 2")


def endpoint_exponent_r1(size):
    """Collected regime-1 endpoint exponent multiplying ``h_v'``."""
    if size == 2:
        return Fraction(1, 2)
    if size in (4, 6):
        return Fraction(3 * size - 10, 4)
    return Fraction(size, 4) - Fraction(3, 2)


def raw_exponent_r1(t):
    """Exponent of ``gamma`` in the uncollected regime-1 bound."""
    e = Fraction(0)
    for v in t.vertices:
        kids = t.children(v)
        e += t.scale[v] * (Fraction(_sum_children_P(t, v), 4) - Fraction(_psize(t, v), 4)
                           - Fraction(3, 2) * (len(kids) - 1))
        e -= (t.scale[v] - t.parent_scale(v)) * z1(_psize(t, v))
    for ep in t.endpoints:
        s = t.size[ep]
        if s in (4, 6):
            e += t.parent_scale(ep) * Fraction(s - 2, 2)
        elif s == 2:
            e += t.parent_scale(ep) * Fraction(3, 2)
    return e


def collected_exponent_r1(t):
    """Exponent after collecting: root part, vertex parts, endpoint parts."""
    top = [v for v in t.nodes if t.parent[v] < 0][0]
    root = t.h * (Fraction(3, 2) - Fraction(_psize(t, top), 4))
    verts = [-(t.scale[v] - t.parent_scale(v)) * vertex_dimension(1, _psize(t, v))
             for v in t.vertices]
    eps = [t.parent_scale(e) * endpoint_exponent_r1(t.size[e]) for e in t.endpoints]
    return root, verts, eps


def vf_exponent_r2(t):
    """Exponent of ``v_F`` from endpoints and vertices in the regime-2 bound."""
    e = Fraction(0)
    for ep in t.endpoints:
        e += -1 + Fraction(t.size[ep], 2)
    for v in t.vertices:
        e -= (Fraction(_sum_children_P(t, v), 2) - Fraction(_psize(t, v), 2)
              - (len(t.children(v)) - 1))
    return e


@dataclass
class DimensionReport:
    regime: int
    vertex_exponents: list
    endpoint_exponents: list
    root_exponent: Fraction
    vf_exponent: Fraction
    raw_exponent: Fraction | None
    value: float
    collected_ok: bool
    positivity_ok: bool

    def to_dict(self):
        return {k: (str(v) if isinstance(v, Fraction) else
                    [str(x) for x in v] if isinstance(v, list) else v)
                for k, v in self.__dict__.items()}


def bound_product(t, regime, gamma=2.0, v_f=None):
    """Evaluate the scale/``v_F`` product of a tree and check its collected form."""
    validate(t)
    if t.P is None:
        raise TreeError("tree has no field assignment")
    top = [v for v in t.nodes if t.parent[v] < 0][0]
    l = _psize(t, top)
    if regime == 1:
        root, verts, eps = collected_exponent_r1(t)
        raw = raw_exponent_r1(t)
        total = root + sum(verts) + sum(eps)
        pos = all(vertex_dimension(1, _psize(t, v)) >= Fraction(1, 2) for v in t.vertices)
        value = gamma ** float(total)
        return DimensionReport(1, verts, eps, root, Fraction(0), raw, value,
                               raw == total, pos)
    if v_f is None or v_f <= 0:
        raise TreeError("regime 2 needs a positive v_F")
    root = t.h * (2 - Fraction(l, 2))
    verts = [-(t.scale[v] - t.parent_scale(v)) * vertex_dimension(2, _psize(t, v))
             for v in t.vertices]
    eps = []
    for e in t.endpoints:
        if t.cls[e] in ("R", ""):
            eps.append(t.parent_scale(e) * (Fraction(t.size[e], 4) - Fraction(1, 2)))
        else:
            eps.append(Fraction(0))
    vf = vf_exponent_r2(t)
    pos = all(vertex_dimension(2, _psize(t, v)) >= 1 for v in t.vertices)
    value = gamma ** float(root + sum(verts) + sum(eps)) * v_f ** float(vf)
    return DimensionReport(2, verts, eps, root, vf, None, value,
                           vf == Fraction(l, 2) - 1, pos)


def endpoint_gain_ok(t):
    """Collected endpoint factors are bounded by ``gamma^(hbar/2)``."""
    _, _, eps = collected_exponent_r1(t)
    return sum(eps) <= Fraction(t.highest_endpoint_parent(), 2)


def short_memory(t, eta=Fraction(1, 2)):
    """Exponents of both sides of the short-memory inequality.

    Left: vertex factors times the ``gamma^(hbar/2)`` gain.  Right: vertex
    factors to the power ``eta`` times ``gamma^(h (1-eta)/2)``.  The
    inequality holds when left <= right (``gamma > 1``, exponents compared).
    """
    _, verts, _ = collected_exponent_r1(t)
    hbar = t.highest_endpoint_parent()
    left = sum(verts) + Fraction(hbar, 2)
    right = eta * sum(verts) + t.h * (1 - eta) / 2
    return left, right


def crossover_consistency(l, r, gamma):
    """Ratio of regime-1 to regime-2 bounds at ``h = h*``."""
    from .model import fermi_data
    from .scales import crossover_scale
    hs = crossover_scale(r, gamma)
    _, v_f = fermi_data(r)
    return gamma ** (hs * (1.5 - l / 4)) / (gamma ** (hs * (2 - l / 2)) * v_f ** (l / 2 - 1))


def topology(t, v=None):
    """Nested-tuple shape with single-child chains collapsed and scales dropped."""
    if v is None:
        v = [i for i in t.nodes if t.parent[i] < 0][0]
    while not t.endpoint[v] and len(t.children(v)) == 1:
        v = t.children(v)[0]
    if t.endpoint[v]:
        return ()
    return tuple(topology(t, c) for c in t.children(v))


def topology_counts(h_root, n_max=MAX_N):
    """Number of distinct scale-free topologies among the enumerated trees."""
    return [len({topology(t) for t in enumerate_trees(h_root, n)})
            for n in range(1, n_max + 1)]


def _growth(counts):
    ns = list(range(1, len(counts) + 1))
    ys = [math.log(c) for c in counts]
    nbar = sum(ns) / len(ns)
    ybar = sum(ys) / len(ys)
    slope = sum((a - nbar) * (b - ybar) for a, b in zip(ns, ys)) / sum((a - nbar) ** 2 for a in ns)
    return math.exp(slope)


def tree_count_growth(h_root, n_max=MAX_N, scale_labels=True):
    """Fitted ``C`` in ``count(n) ~ C^n``.

    With ``scale_labels`` the full scale-labelled count at this depth is
    used, whose ``C`` grows with the depth because every branching can sit
    on any scale; otherwise the scale-free topologies are counted.
    """
    if scale_labels:
        return _growth([count_trees(h_root, n) for n in range(1, n_max + 1)])
    return _growth(topology_counts(h_root, n_max))
