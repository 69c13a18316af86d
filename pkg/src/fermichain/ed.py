"""Exact diagonalisation of the interacting chain in particle-number sectors.

Fermionic operators act on bitstrings with the ordering sign
``a+_x |s> = (-1)^{#occupied sites < x} |s + e_x>``; hopping across the
boundary then carries the sign appropriate to periodic fermions.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np
import scipy.linalg

from .model import potential_values

MAX_L = 14
DENSE_L = 12


class EDSizeError(ValueError):
    """Requested chain is too long for exact diagonalisation."""


def sector_states(L, N):
    """Bitstrings with ``N`` set bits out of ``L``, sorted."""
    return np.array(sorted(sum(1 << i for i in c) for c in combinations(range(L), N)),
                    dtype=np.int64)


def _sign_before(s, x):
    return -1.0 if bin(s & ((1 << x) - 1)).count("1") % 2 else 1.0


def _pairs(L, v):
    """Distinct ordered pairs ``(x, y)`` with weights ``v(x - y)`` on the ring."""
    vals = potential_values(v)
    out = {}
    for x in range(L):
        for d, c in vals.items():
            y = (x + d) % L
            # every separation d counts once per ordered pair even if the ring wraps
            out[(x, y)] = out.get((x, y), 0.0) + c
    return out


def sector_hamiltonian(L, N, lam, r, v=(0.0, 0.5)):
    """Dense Hamiltonian block of the ``N``-particle sector."""
    h = -1.0 + r
    states = sector_states(L, N)
    index = {int(s): i for i, s in enumerate(states)}
    dim = len(states)
    H = np.zeros((dim, dim))
    pairs = _pairs(L, v)
    for i, s in enumerate(states):
        s = int(s)
        occ = [(s >> x) & 1 for x in range(L)]
        diag = -h * sum(occ)
        for (x, y), c in pairs.items():
            if occ[x] and occ[y]:
                diag -= lam * c
        H[i, i] = diag
        for x in range(L):
            y = (x + 1) % L
            if x == y:
                continue
            # a+_y a_x and its conjugate a+_x a_y, each with amplitude -1/2
            for src, dst in ((x, y), (y, x)):
                if occ[src] and not occ[dst]:
                    t = s ^ (1 << src)
                    sign = _sign_before(s, src) * _sign_before(t, dst)
                    j = index[t | (1 << dst)]
                    H[j, i] += -0.5 * sign
    return H


def build_hamiltonian(L, lam, r, v=(0.0, 0.5)):
    """All number-sector blocks ``{N: H_N}``; refuses ``L > 14``."""
    if L > MAX_L:
        raise EDSizeError(f"L={L} exceeds the exact-diagonalisation limit {MAX_L}")
    if L < 2:
        raise EDSizeError("need at least two sites")
    return {N: sector_hamiltonian(L, N, lam, r, v) for N in range(L + 1)}


def creation_matrix(L, N, x):
    """``a+_x`` from sector ``N`` to ``N+1`` in the bitstring bases."""
    src = sector_states(L, N)
    dst = sector_states(L, N + 1)
    index = {int(s): i for i, s in enumerate(dst)}
    A = np.zeros((len(dst), len(src)))
    for i, s in enumerate(src):
        s = int(s)
        if not (s >> x) & 1:
            A[index[s | (1 << x)], i] = _sign_before(s, x)
    return A


@dataclass
class SpectralData:
    """Eigen-decomposition per sector plus thermal normalisation."""

    L: int
    beta: float
    energies: dict
    vectors: dict
    params: dict

    @property
    def e0(self):
        return min(float(e.min()) for e in self.energies.values())

    @property
    def log_z(self):
        e0 = self.e0
        z = sum(np.exp(-self.beta * (e - e0)).sum() for e in self.energies.values())
        return math.log(z) - self.beta * e0

    def save(self, stem):
        """Write ``stem.json`` (header) and ``stem.bin`` (little-endian float64)."""
        head = {"L": self.L, "beta": self.beta, "params": self.params, "sectors": []}
        chunks = []
        offset = 0
        for N in sorted(self.energies):
            e = np.asarray(self.energies[N], dtype="<f8")
            vec = np.asarray(self.vectors[N], dtype="<f8")
            head["sectors"].append({"N": N, "dim": int(e.size), "offset": offset})
            chunks += [e.tobytes(), vec.tobytes()]
            offset += 8 * (e.size + vec.size)
        with open(f"{stem}.json", "w") as fh:
            json.dump(head, fh, indent=2, sort_keys=True)
        with open(f"{stem}.bin", "wb") as fh:
            for c in chunks:
                fh.write(c)

    @classmethod
    def load(cls, stem):
        with open(f"{stem}.json") as fh:
            head = json.load(fh)
        raw = np.fromfile(f"{stem}.bin", dtype="<f8")
        energies, vectors = {}, {}
        for sec in head["sectors"]:
            d = sec["dim"]
            o = sec["offset"] // 8
            energies[sec["N"]] = raw[o:o + d].copy()
            vectors[sec["N"]] = raw[o + d:o + d + d * d].reshape(d, d).copy()
        return cls(head["L"], head["beta"], energies, vectors, head["params"])


def diagonalize(L, lam, r, beta=None, v=(0.0, 0.5)):
    """Full spectra of every sector (dense ``eigh``); ``beta`` defaults to ``4 L``."""
    if L > DENSE_L:
        raise EDSizeError(f"full spectra need L <= {DENSE_L}; use ground_state for larger L")
    if beta is None:
        beta = 4.0 * L
    blocks = build_hamiltonian(L, lam, r, v)
    energies, vectors = {}, {}
    for N, H in blocks.items():
        e, U = scipy.linalg.eigh(H)
        energies[N] = e
        vectors[N] = U
    return SpectralData(L, float(beta), energies, vectors,
                        {"lam": lam, "r": r, "v": list(v)})


def ground_state(L, lam, r, v=(0.0, 0.5), sectors=None):
    """Lowest energy per sector; sparse Lanczos for sectors above 1000 states."""
    if L > MAX_L:
        raise EDSizeError(f"L={L} exceeds the exact-diagonalisation limit {MAX_L}")
    from scipy.sparse import csr_matrix
    from scipy.sparse.linalg import eigsh
    out = {}
    for N in (range(L + 1) if sectors is None else sectors):
        H = sector_hamiltonian(L, N, lam, r, v)
        if H.shape[0] > 1000:
            out[N] = float(eigsh(csr_matrix(H), k=1, which="SA")[0][0])
        else:
            out[N] = float(np.linalg.eigvalsh(H)[0])
    return out


def _matrix_elements(sp, N, x):
    """``<n|a+_x|m>`` between eigenvectors of sectors ``N`` and ``N+1``."""
    A = creation_matrix(sp.L, N, x)
    return sp.vectors[N + 1].T @ A @ sp.vectors[N]


def thermal_two_point(x, tau, sp: SpectralData):
    """Time-ordered ``<T a_x(tau) a+_0>`` for ``-beta < tau < beta``, ``tau != 0``.

    Boltzmann weights are computed with the ground energy subtracted, and the
    exponents are combined before exponentiating so nothing overflows.
    """
    beta = sp.beta
    if not -beta < tau < beta or tau == 0:
        raise ValueError("tau must lie in (-beta, 0) or (0, beta)")
    e0 = sp.e0
    z = math.exp(sp.log_z + beta * e0)  # sum exp(-beta (E - e0))
    total = 0.0
    for N in range(sp.L):
        em = sp.energies[N] - e0
        en = sp.energies[N + 1] - e0
        cx = _matrix_elements(sp, N, x % sp.L)   # <n|a+_x|m>
        c0 = _matrix_elements(sp, N, 0)          # <n|a+_0|m>
        prod = cx * c0                           # <m|a_x|n><n|a+_0|m> (real basis)
        if tau > 0:
            w = np.exp(-(beta - tau) * em[None, :] - tau * en[:, None])
            total += float((w * prod).sum())
        else:
            t = -tau
            w = np.exp(-(beta - t) * en[:, None] - t * em[None, :])
            total -= float((w * prod).sum())
    return total / z


def schwinger_momentum(k0, k, sp: SpectralData):
    """``S_hat(k0, k)`` from the Lehmann representation, analytic in ``tau``.

    ``sum (e^{-beta E_m} + e^{-beta E_n}) |<n|a+_k|m>|^2 / (Z (E_m - E_n - i k0))``.
    """
    L = sp.L
    e0 = sp.e0
    z = math.exp(sp.log_z + sp.beta * e0)
    phases = np.exp(1j * k * np.arange(L)) / math.sqrt(L)
    k0 = np.atleast_1d(np.asarray(k0, dtype=float))
    out = np.zeros(k0.shape, dtype=complex)
    for N in range(L):
        Ak = sum(phases[x] * creation_matrix(L, N, x) for x in range(L))
        M = sp.vectors[N + 1].T @ Ak @ sp.vectors[N]
        w2 = np.abs(M) ** 2
        em = sp.energies[N] - e0
        en = sp.energies[N + 1] - e0
        boltz = np.exp(-sp.beta * em)[None, :] + np.exp(-sp.beta * en)[:, None]
        num = (boltz * w2).ravel()
        keep = num > 0
        num = num[keep]
        de = (em[None, :] - en[:, None]).ravel()[keep]
        out += (num[None, :] / (de[None, :] - 1j * k0[:, None])).sum(axis=1)
    out /= z
    return out if out.size > 1 else out[0]


def phase_diagnostics(L, lams, rs, v=(0.0, 0.5)):
    """Ground-state density, charge gap and momentum occupation per ``(lam, r)``."""
    if L > DENSE_L:
        raise EDSizeError(f"phase scans need L <= {DENSE_L}")
    rows = []
    for lam in lams:
        for r in rs:
            e = ground_state(L, lam, r, v)
            emin = min(e.values())
            degenerate = [N for N in e if e[N] - emin <= 1e-10 * max(1.0, abs(emin))]
            lo, hi = min(degenerate), max(degenerate)
            n0 = lo
            # charge gap: cost of leaving the degenerate ground multiplet
            gap_p = e[hi + 1] - emin if hi < L else math.inf
            gap_m = e[lo - 1] - emin if lo > 0 else math.inf
            gap = 0.0 if hi > lo else min(gap_p, gap_m)
            rows.append({"L": L, "lam": lam, "r": r, "N": n0,
                         "density": (lo + hi) / (2 * L), "gap": gap,
                         "nk": momentum_occupation(L, lam, r, n0, v).tolist()})
    return rows


def momentum_occupation(L, lam, r, N, v=(0.0, 0.5)):
    """``<a+_k a_k>`` in the lowest state of sector ``N`` for ``k = 2 pi m / L``."""
    H = sector_hamiltonian(L, N, lam, r, v)
    _, U = np.linalg.eigh(H)
    psi = U[:, 0]
    occ = np.zeros(L)
    if N == 0:
        return occ
    ops = [creation_matrix(L, N - 1, x).T for x in range(L)]  # a_x : N -> N-1
    for m in range(L):
        k = 2 * math.pi * m / L
        ak = sum(np.exp(-1j * k * x) * ops[x] for x in range(L)) / math.sqrt(L)
        phi = ak @ psi
        occ[m] = float(np.vdot(phi, phi).real)
    return occ


def particle_hole_partner(lam, r, v=(0.0, 0.5)):
    """Parameters ``r'`` and energy offset mapping sector ``N`` to ``L - N``.

    ``U a_x U^-1 = (-1)^x a+_x`` sends ``H(h)`` to ``H(h') + c L`` with
    ``h' = -h - 2 lam v_hat(0)`` and ``c = -h - lam v_hat(0)`` (even ``L``).
    """
    vh0 = v[0] + 2 * sum(v[1:])
    h = -1.0 + r
    hp = -h - 2 * lam * vh0
    return 1.0 + hp, -h - lam * vh0
