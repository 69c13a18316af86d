"""Infrared scale decomposition of the free propagator.

Single-scale propagators are evaluated as mode sums over the support of the
cutoff.  A scale-``h`` propagator lives on a box of frequencies
``|k0| <~ a0 gamma^(h+1)`` and the corresponding ring of momenta; it is summed
on a grid with spacings ``2 pi / beta_h`` and ``2 pi / L_h`` where ``beta_h``
and ``L_h`` are many decay lengths, so the sum is a spectrally accurate
quadrature of the infinite-volume integral

    g(x0, x) = -int dk0 dk / (2 pi)^2  exp(i (k0 x0 + k x)) f_h(kk) / D(kk).

The overall minus sign and the ``+i`` phase follow the momentum convention of
:mod:`fermichain.model`.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from ._accel import USE_NUMBA, jit
from .model import fermi_data

SCHEMA_VERSION = 1


class QuadratureError(RuntimeError):
    """The mode sum changed by more than the tolerance under refinement."""


# ---------------------------------------------------------------- cutoffs

def smooth_step(u):
    """C-infinity step: 0 for ``u <= 0``, 1 for ``u >= 1``, ``S(u) + S(1-u) = 1``."""
    u = np.asarray(u, dtype=float)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        a = np.where(u > 0, np.exp(-1.0 / np.where(u > 0, u, 1.0)), 0.0)
        b = np.where(u < 1, np.exp(-1.0 / np.where(u < 1, 1.0 - u, 1.0)), 0.0)
    out = a / (a + b)
    return out if out.ndim else float(out)


def chi0(t, gamma):
    """Even bump equal to 1 on ``|t| <= 1``, 0 on ``|t| >= gamma``, monotone in between."""
    u = (gamma - np.abs(t)) / (gamma - 1.0)
    return smooth_step(u)


def theta_split(t):
    """Quasi-particle splitter: ``theta(t) + theta(-t) = 1``, equal to 1 for ``t >= 1/2``."""
    return smooth_step(np.asarray(t, dtype=float) + 0.5)


def aperture(r, gamma):
    """``a0 = (1/2 - r) / gamma``."""
    return (0.5 - r) / gamma


def crossover_scale(r, gamma):
    """Smallest integer ``h`` with ``a0 gamma^(h+1) > |r|``; ``-inf`` at ``r = 0``.

    Found by a direct downward scan, which avoids rounding issues of a
    closed-form logarithm at the boundary.
    """
    if r == 0:
        return -math.inf
    a0 = aperture(r, gamma)
    if a0 <= 0:
        raise ValueError(f"aperture vanishes for r={r}")
    h = 0
    while not a0 * gamma ** (h + 1) > abs(r):
        h += 1
    while a0 * gamma ** h > abs(r):  # h - 1 also qualifies
        h -= 1
    return h


def denominator(k0, k, r, gamma=2.0, h=0, couplings=(0.0, 0.0, 0.0)):
    """``D = -i k0 (1+z) + (1+alpha)(cos k - 1) + r + gamma^h mu``."""
    z, alpha, mu = couplings
    return (-1j * np.asarray(k0) * (1.0 + z) + (1.0 + alpha) * (np.cos(k) - 1.0)
            + r + gamma ** h * mu)


def chi_leq(h, k0, k, r, gamma, couplings=(0.0, 0.0, 0.0), freeze=False):
    """Cumulative cutoff ``chi_{<=h}`` evaluated on the modulus of ``D``.

    ``freeze=True`` drops the running couplings from the argument.
    """
    a0 = aperture(r, gamma)
    c = (0.0, 0.0, 0.0) if freeze else couplings
    d = np.abs(denominator(k0, k, r, gamma, h, c))
    return chi0(d / (a0 * gamma ** h), gamma)


def f_scale(h, k0, k, r, gamma, couplings=(0.0, 0.0, 0.0), freeze=False):
    """Single-scale cutoff ``f_h = chi_{<=h} - chi_{<=h-1}``."""
    return (chi_leq(h, k0, k, r, gamma, couplings, freeze)
            - chi_leq(h - 1, k0, k, r, gamma, couplings, freeze))


# ---------------------------------------------------------------- mode sums

@jit
def _mode_sum_nb(x0s, xs, k0s, ks, wre, wim, out_re, out_im):
    for p in range(x0s.shape[0]):
        sr = 0.0
        cr = 0.0
        si = 0.0
        ci = 0.0
        for j in range(k0s.shape[0]):
            ph = k0s[j] * x0s[p] + ks[j] * xs[p]
            c = math.cos(ph)
            s = math.sin(ph)
            tr = wre[j] * c - wim[j] * s - cr
            t = sr + tr
            cr = (t - sr) - tr
            sr = t
            ti = wre[j] * s + wim[j] * c - ci
            t = si + ti
            ci = (t - si) - ti
            si = t
        out_re[p] = sr
        out_im[p] = si


def _mode_sum_np(x0s, xs, k0s, ks, w, chunk=1 << 21):
    out = np.empty(x0s.shape[0], dtype=complex)
    step = max(1, chunk // max(1, k0s.shape[0]))
    for s in range(0, x0s.shape[0], step):
        ph = np.outer(x0s[s:s + step], k0s) + np.outer(xs[s:s + step], ks)
        out[s:s + step] = np.exp(1j * ph) @ w
    return out


def mode_sum(x0, x, k0s, ks, w, use_numba=None):
    """``sum_j w_j exp(i (k0_j x0 + k_j x))`` for broadcast arrays ``x0, x``."""
    if use_numba is None:
        use_numba = USE_NUMBA
    x0, x = np.broadcast_arrays(np.asarray(x0, dtype=float), np.asarray(x, dtype=float))
    shape = x0.shape
    a = np.ascontiguousarray(x0.ravel())
    b = np.ascontiguousarray(x.ravel())
    k0s = np.ascontiguousarray(k0s, dtype=float)
    ks = np.ascontiguousarray(ks, dtype=float)
    w = np.ascontiguousarray(w, dtype=complex)
    if use_numba:
        re = np.empty(a.shape[0])
        im = np.empty(a.shape[0])
        _mode_sum_nb(a, b, k0s, ks, np.ascontiguousarray(w.real),
                     np.ascontiguousarray(w.imag), re, im)
        out = re + 1j * im
    else:
        out = _mode_sum_np(a, b, k0s, ks, w)
    return out.reshape(shape)


@dataclass(frozen=True)
class ModeGrid:
    """Support modes of one propagator with quadrature weights.

    ``weights`` already contain ``-1 / (beta_eff L_eff)``; ``k`` is the
    momentum used in the phase (measured from ``omega p_F`` in regime 2).
    """

    k0: np.ndarray
    k: np.ndarray
    weights: np.ndarray
    beta_eff: float
    L_eff: float

    def evaluate(self, x0, x, deriv=(0, 0), use_numba=None):
        w = self.weights * (1j * self.k0) ** deriv[0] * (1j * np.sin(self.k)) ** deriv[1]
        return mode_sum(x0, x, self.k0, self.k, w, use_numba)


def _fermionic(period, kmax):
    n = int(math.ceil(kmax * period / (2 * math.pi))) + 1
    return 2 * math.pi / period * (np.arange(-n, n) + 0.5)


def _bosonic(period, lo, hi):
    d = 2 * math.pi / period
    m = np.arange(math.floor(lo / d) - 1, math.ceil(hi / d) + 2)
    return d * m


def regime1_grid(h, r, gamma, couplings=(0.0, 0.0, 0.0), res=1.0, freeze=False):
    """Mode grid of the regime-1 single-scale propagator ``g^(h)``.

    ``res`` scales both periods; ``res = 2`` halves the quadrature steps.
    """
    z, alpha, mu = couplings
    a0 = aperture(r, gamma)
    top = a0 * gamma ** (h + 1)
    beta_h = 64.0 * res / top
    L_h = 64.0 * res * max(1.0, math.sqrt(2.0 / top))
    k0 = _fermionic(beta_h, top / (1.0 + z) * 1.001)
    # |(1+alpha)(cos k - 1) + r + gamma^h mu| <= top bounds 1 - cos k
    c = (top + abs(r + gamma ** h * mu)) / (1.0 + alpha)
    kmax = math.pi if c >= 2.0 else math.acos(1.0 - c) * 1.001
    k = _bosonic(L_h, -kmax, kmax)
    k = k[np.abs(k) <= math.pi]
    K0, K = np.meshgrid(k0, k, indexing="ij")
    f = f_scale(h, K0, K, r, gamma, couplings, freeze)
    mask = f != 0.0
    d = denominator(K0[mask], K[mask], r, gamma, h, couplings)
    w = -f[mask] / d / (beta_h * L_h)
    return ModeGrid(K0[mask], K[mask], w, beta_h, L_h)


def _check_refined(build, x0, x, deriv, tol):
    a = build(1.0).evaluate(x0, x, deriv)
    b = build(2.0).evaluate(x0, x, deriv)
    scale = max(np.abs(b).max(), 1e-300)
    err = np.abs(a - b).max() / scale
    if err > tol:
        raise QuadratureError(f"mode sum not converged: relative change {err:.2e} > {tol:.1e}")
    return b


def single_scale_propagator(h, x0, x, r, gamma, couplings=(0.0, 0.0, 0.0),
                            deriv=(0, 0), res=1.0, check=False, tol=1e-7):
    """Regime-1 single-scale propagator ``g^(h)(x0, x)`` (or a derivative).

    ``deriv=(n0, n1)`` applies ``d/dx0`` ``n0`` times and the lattice
    derivative ``i sin k`` ``n1`` times in momentum space.  With ``check``
    the sum is repeated at doubled resolution and :class:`QuadratureError`
    is raised if they differ by more than ``tol`` (relative to the sup).
    """
    def build(s):
        return regime1_grid(h, r, gamma, couplings, res * s)
    if check:
        return _check_refined(build, x0, x, deriv, tol)
    return build(1.0).evaluate(x0, x, deriv)


def regime2_grid(h, omega, r, gamma, res=1.0, linear=False, couplings=(0.0, 0.0, 0.0)):
    """Mode grid of the quasi-particle propagator ``g_omega^(h)``.

    Momenta in the returned grid are ``k' = k - omega p_F``.  With
    ``linear=True`` the dispersion is replaced by its tangent at
    ``omega p_F`` (both in the denominator and in the cutoff), which gives
    the Luttinger reference propagator.
    """
    if omega not in (1, -1):
        raise ValueError("omega must be +1 or -1")
    p_f, v_f = fermi_data(r)
    z, alpha, mu = couplings
    a0 = aperture(r, gamma)
    top = a0 * gamma ** (h + 1)
    beta_h = 64.0 * res / top
    L_h = 64.0 * res * max(1.0, v_f / top)
    k0 = _fermionic(beta_h, top / (1.0 + z) * 1.001)
    span = min(p_f, 4.0 * top / v_f)
    kp = _bosonic(L_h, -span, span)
    K0, KP = np.meshgrid(k0, kp, indexing="ij")
    K = omega * p_f + KP
    split = theta_split(omega * K / p_f)
    if linear:
        d_lin = -1j * K0 * (1.0 + z) - (1.0 + alpha) * omega * v_f * KP
        scaled = np.abs(d_lin) / a0
        f = chi0(scaled / gamma ** h, gamma) - chi0(scaled / gamma ** (h - 1), gamma)
        d = d_lin
    else:
        f = f_scale(h, K0, K, r, gamma, couplings)
        d = denominator(K0, K, r, gamma, h, couplings)
    wgt = f * split
    mask = wgt != 0.0
    w = -wgt[mask] / d[mask] / (beta_h * L_h)
    return ModeGrid(K0[mask], KP[mask], w, beta_h, L_h)


def qp_propagator(h, omega, x0, x, r, gamma, res=1.0, linear=False, check=False, tol=1e-7):
    """Regime-2 quasi-particle single-scale propagator ``g_omega^(h)(x0, x)``."""
    def build(s):
        return regime2_grid(h, omega, r, gamma, res * s, linear)
    if check:
        return _check_refined(build, x0, x, (0, 0), tol)
    return build(1.0).evaluate(x0, x)


def qp_cumulative_grid(hstar, omega, r, gamma, res=1.0):
    """Mode grid of ``g_omega^(<=h*)``, momenta measured from ``omega p_F``."""
    p_f, v_f = fermi_data(r)
    a0 = aperture(r, gamma)
    top = a0 * gamma ** (hstar + 1)
    beta_h = 64.0 * res / top
    L_h = 64.0 * res * max(1.0, v_f / top)
    k0 = _fermionic(beta_h, top * 1.001)
    c = top + abs(r)
    kmax = math.pi if c >= 2.0 else math.acos(1.0 - c) * 1.001
    k = _bosonic(L_h, -kmax, kmax)
    K0, K = np.meshgrid(k0, k, indexing="ij")
    wgt = chi_leq(hstar, K0, K, r, gamma) * theta_split(omega * K / p_f)
    mask = wgt != 0.0
    w = -wgt[mask] / denominator(K0[mask], K[mask], r, gamma) / (beta_h * L_h)
    return ModeGrid(K0[mask], K[mask] - omega * p_f, w, beta_h, L_h)


def cumulative_grid(hstar, r, gamma, res=1.0):
    """Mode grid of the full ``g^(<=h*)`` without the quasi-particle split."""
    a = qp_cumulative_grid(hstar, 1, r, gamma, res)
    p_f, _ = fermi_data(r)
    a0 = aperture(r, gamma)
    top = a0 * gamma ** (hstar + 1)
    beta_h = a.beta_eff
    L_h = a.L_eff
    k0 = _fermionic(beta_h, top * 1.001)
    c = top + abs(r)
    kmax = math.pi if c >= 2.0 else math.acos(1.0 - c) * 1.001
    k = _bosonic(L_h, -kmax, kmax)
    K0, K = np.meshgrid(k0, k, indexing="ij")
    wgt = chi_leq(hstar, K0, K, r, gamma)
    mask = wgt != 0.0
    w = -wgt[mask] / denominator(K0[mask], K[mask], r, gamma) / (beta_h * L_h)
    return ModeGrid(K0[mask], K[mask], w, beta_h, L_h)


def luttinger_decompose(h, omega, x0, x, r, gamma, res=1.0):
    """Split ``g_omega^(h) = g_L + remainder`` with ``g_L`` the linear-dispersion part."""
    full = qp_propagator(h, omega, x0, x, r, gamma, res)
    lin = qp_propagator(h, omega, x0, x, r, gamma, res, linear=True)
    return lin, full - lin


# ---------------------------------------------------------------- diagnostics

def support_measure(h, r, gamma):
    """``int dk0 dk f_h(kk)`` over the infinite-volume momentum plane."""
    g = regime1_grid(h, r, gamma)
    f = f_scale(h, g.k0, g.k, r, gamma)
    return float(f.sum()) * (2 * math.pi) ** 2 / (g.beta_eff * g.L_eff)


def _cut_points(length, n=129):
    return np.linspace(-length, length, n)


def envelope(grid: ModeGrid, ell0, ell1, deriv=(0, 0), n=33):
    """Sup of ``|g|`` over a ``n x n`` window of half-widths ``ell0, ell1``."""
    t = np.linspace(-ell0, ell0, n)
    xs = np.arange(-int(math.ceil(ell1)), int(math.ceil(ell1)) + 1,
                   max(1, int(math.ceil(2 * ell1 / n))))
    T, X = np.meshgrid(t, xs, indexing="ij")
    return float(np.abs(grid.evaluate(T, X, deriv)).max())


def rms_widths(grid: ModeGrid, x_step=1):
    """RMS widths of ``|g|^2`` along the time axis (``x = 0``) and space axis (``x0 = 0``).

    The cuts extend over half the quadrature periods, where the tabulated
    function has decayed by many orders of magnitude.
    """
    half0 = grid.beta_eff / 2
    t = np.linspace(-half0, half0, 2049)
    g0 = np.abs(grid.evaluate(t, 0.0)) ** 2
    w0 = math.sqrt(float((t**2 * g0).sum() / g0.sum()))
    half1 = int(grid.L_eff / 2)
    xs = np.arange(-half1, half1 + 1, x_step, dtype=float)
    g1 = np.abs(grid.evaluate(0.0, xs)) ** 2
    w1 = math.sqrt(float((xs**2 * g1).sum() / g1.sum()))
    return w0, w1


def scaling_exponent(hs, values, gamma):
    """Least-squares slope ``s`` of ``log_gamma(values)`` against ``h``."""
    hs = np.asarray(hs, dtype=float)
    y = np.log(np.asarray(values, dtype=float)) / math.log(gamma)
    return float(np.polyfit(hs, y, 1)[0])


# ---------------------------------------------------------------- tables

@dataclass
class PropagatorTable:
    """Sampled propagator values with enough metadata to regenerate them."""

    h: int
    regime: int
    omega: int | None
    x0: np.ndarray
    x: np.ndarray
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    @classmethod
    def build(cls, h, r, gamma, x0, x, regime=1, omega=None, res=1.0):
        x0 = np.asarray(x0, dtype=float)
        x = np.asarray(x, dtype=float)
        if regime == 1:
            vals = single_scale_propagator(h, x0, x, r, gamma, res=res)
        else:
            vals = qp_propagator(h, omega, x0, x, r, gamma, res=res)
        if not np.all(np.isfinite(vals)):
            raise QuadratureError("non-finite propagator values")
        meta = {"r": r, "gamma": gamma, "res": res, "couplings": [0.0, 0.0, 0.0]}
        return cls(h, regime, omega, x0, x, vals, meta)

    def rebuild(self):
        return PropagatorTable.build(self.h, self.meta["r"], self.meta["gamma"],
                                     self.x0, self.x, self.regime, self.omega,
                                     self.meta["res"])

    def write(self, csv_path, json_path):
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["h", "omega", "x0", "x", "re", "im"])
            om = "" if self.omega is None else self.omega
            for a, b, v in zip(self.x0.ravel(), self.x.ravel(), self.values.ravel()):
                w.writerow([self.h, om, repr(float(a)), repr(float(b)),
                            repr(float(v.real)), repr(float(v.imag))])
        head = {"schema_version": SCHEMA_VERSION, "h": self.h, "regime": self.regime,
                "omega": self.omega, "shape": list(self.values.shape), **self.meta}
        with open(json_path, "w") as fh:
            json.dump(head, fh, indent=2, sort_keys=True)

    @classmethod
    def read(cls, csv_path, json_path):
        with open(json_path) as fh:
            head = json.load(fh)
        rows = np.loadtxt(csv_path, delimiter=",", skiprows=1, usecols=(2, 3, 4, 5), ndmin=2)
        shape = tuple(head["shape"])
        meta = {k: head[k] for k in ("r", "gamma", "res", "couplings")}
        return cls(head["h"], head["regime"], head["omega"], rows[:, 0].reshape(shape),
                   rows[:, 1].reshape(shape), (rows[:, 2] + 1j * rows[:, 3]).reshape(shape),
                   meta)
