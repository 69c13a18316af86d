"""Second-order flow of the running couplings in both regimes.

Kernels
-------
``W`` denotes the additive correction to the inverse propagator, so that to
the order kept the interacting two-point function is ``1 / (D + sum_h W^(h))``.
Written with the physical Green function ``G = -S`` and ``U = -2 lam v`` the
diagrams are

* first order: ``W1(k) = 2 lam int dq/2pi (v_hat(0) - v_hat(k-q)) m(q)`` with
  ``m(q) = int dk0/2pi g_hat(k0, q)`` (symmetrised equal-time occupation
  minus 1/2); the constant ``lam v_hat(0)`` from the 1/2 is the counterterm;
* second order: ``W2(k0, k) = -int dx0 sum_x exp(-i(k0 x0 + k x)) Sigma(x0, x)``
  with ``Sigma = Sigma_direct + Sigma_exchange``,
  ``Sigma_direct(t, x) = -G(t, x) [U * U * P](t, x)``, ``P(t, w) = G(t, w) G(-t, -w)``,
  ``Sigma_exchange(t, x) = sum_ab U(a) U(b) G(t, x-b) G(-t, a+b-x) G(t, x-a)``.

Second-order diagrams are evaluated on a periodic box in which every line is
band limited; three-line products are alias free when the box holds three
times the frequency support, so the box sums are exact for the box and the
infinite-volume transform is read off by unwrapping the box around the origin.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import fft as sfft

from .model import fermi_data, potential_fourier, potential_values, solve_interacting_pf
from .scales import (SCHEMA_VERSION, QuadratureError, aperture, chi0, chi_leq,
                     crossover_scale, denominator, f_scale, theta_split)


class FlowError(RuntimeError):
    """A running coupling left the region where the expansion is controlled."""


def _pow2(n):
    return 1 << max(3, int(math.ceil(math.log2(max(n, 1)))))


# ---------------------------------------------------------------- periodic box

@dataclass
class Box:
    """Periodic imaginary-time/space box with ``n0 x n1`` sample points.

    ``dx`` is the spatial sample spacing (1 on the lattice); momenta are
    ``2 pi m / (n1 dx)`` and frequencies ``(2 pi / beta)(n + 1/2)``, both
    stored in centred order.
    """

    beta: float
    n0: int
    n1: int
    dx: float = 1.0

    @property
    def length(self):
        return self.n1 * self.dx

    @property
    def k0(self):
        return 2 * math.pi / self.beta * (np.arange(self.n0) - self.n0 // 2 + 0.5)

    @property
    def k(self):
        return 2 * math.pi / self.length * (np.arange(self.n1) - self.n1 // 2)

    def mesh(self):
        return np.meshgrid(self.k0, self.k, indexing="ij")

    def propagators(self, ghat):
        """``(G(t, x), G(-t, -x))`` on the sample grid for ``G = -S``."""
        a = sfft.ifftshift(ghat)
        j = np.arange(self.n0)[:, None]
        half = np.exp(1j * math.pi * j / self.n0)
        norm = 1.0 / (self.beta * self.length)
        gp = sfft.ifft2(a, workers=-1) * (self.n0 * self.n1 * norm) * half
        gm = sfft.fft2(a, workers=-1) * norm * np.conj(half)
        return gp, gm

    def transform(self, sigma, k0s, ks):
        """``-int dt dx exp(-i(k0 t + k x)) Sigma`` on the unwrapped box, per point.

        The Nyquist samples at ``t = beta/2`` and ``x = L/2`` are split evenly
        between the two ends so the transform keeps the parities of ``Sigma``.
        """
        h0, h1 = self.n0 // 2, self.n1 // 2
        t = np.arange(self.n0) * (self.beta / self.n0)
        sgn = np.ones(self.n0)
        sgn[h0:] = -1.0
        t[h0:] -= self.beta
        x = np.arange(self.n1) * self.dx
        x[h1:] -= self.length
        s = sigma * sgn[:, None]
        w = -(self.beta / self.n0) * self.dx
        out = np.empty(len(k0s), dtype=complex)
        cache = {}
        for i, (q0, q) in enumerate(zip(k0s, ks)):
            if q0 not in cache:
                ph = np.exp(-1j * q0 * t)
                ph[h0] = -1j * math.sin(q0 * self.beta / 2)  # sign already applied
                cache[q0] = ph @ s
            px = np.exp(-1j * q * x)
            px[h1] = math.cos(q * self.length / 2)
            out[i] = w * (cache[q0] @ px)
        return out


def _roll(a, s):
    return np.roll(a, s, axis=1)


def sigma_lattice(gp, gm, u):
    """Second-order ``Sigma(t, x)`` on a lattice box for a finite-range ``u``.

    ``u`` maps separations to ``U(d)``.
    """
    n1 = gp.shape[1]
    uu = np.zeros(n1)
    for d, c in u.items():
        uu[d % n1] += c
    kern = np.fft.fft(uu) ** 2
    p = gp * gm
    direct = -gp * sfft.ifft(sfft.fft(p, axis=1, workers=-1) * kern[None, :], axis=1, workers=-1)
    exch = np.zeros_like(gp)
    for a, ua in u.items():
        for b, ub in u.items():
            exch += ua * ub * _roll(gp, b) * _roll(gm, a + b) * _roll(gp, a)
    return direct + exch


def interaction_range(lam, v):
    """``U(d) = -2 lam v(d)`` as a dict."""
    return {d: -2.0 * lam * c for d, c in potential_values(v).items()}


# ---------------------------------------------------------------- stencils

def central_first(f, step):
    """5-point first derivative from values at ``-2, -1, 0, 1, 2`` steps."""
    return (f[0] - 8 * f[1] + 8 * f[3] - f[4]) / (12 * step)


def central_second(f, step):
    return (-f[0] + 16 * f[1] - 30 * f[2] + 16 * f[3] - f[4]) / (12 * step * step)


_OFF = (-2, -1, 0, 1, 2)


@dataclass
class SecondOrderKernel:
    """Kernel samples on the stencil ``{0, +-d0, +-2 d0}`` x ``{0, +-d1, +-2 d1}``.

    ``k0_line`` holds ``W(j d0, 0)`` and ``k_line`` ``W(0, j d1)`` for
    ``j = -2..2``; the first- and second-order parts are kept separately.
    """

    h: int
    d0: float
    d1: float
    k0_line: np.ndarray
    k_line: np.ndarray
    first: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def value(self):
        return complex(self.k_line[2])

    @property
    def d_k0(self):
        return complex(central_first(self.k0_line, self.d0))

    @property
    def d_k(self):
        return complex(central_first(self.k_line, self.d1))

    @property
    def d_kk(self):
        return complex(central_second(self.k_line, self.d1))


def zero_kernel(h, d0=1e-3, d1=1e-2):
    z = np.zeros(5, dtype=complex)
    return SecondOrderKernel(h, d0, d1, z.copy(), z.copy(), z.copy(), {"zero": True})


# ---------------------------------------------------------------- regime 1: first order

def _ratio(f, d):
    """``f / d`` with zero wherever the cutoff ``f`` vanishes."""
    nz = f != 0
    return np.where(nz, f / np.where(nz, d, 1.0), 0.0)


def _k0_integral(fn, k0max, n=513):
    """``int dk0/2pi fn(k0)`` for a smooth integrand supported in ``|k0| < k0max``."""
    k0 = np.linspace(-k0max, k0max, n)
    w = np.full(n, 2 * k0max / (n - 1))
    w[0] *= 0.5
    w[-1] *= 0.5
    return np.tensordot(w, fn(k0[:, None]), axes=1) / (2 * math.pi)


def _q_support(top, shift, alpha):
    """Half-width of the momentum interval where ``|(1+a)(cos q - 1) + shift| <= top``."""
    c = (top + abs(shift)) / (1.0 + alpha)
    return math.pi if c >= 2.0 else math.acos(1.0 - c)


def occupation_scale(h, q, r, gamma, couplings=(0.0, 0.0, 0.0)):
    """``m^(h)(q) = int dk0/2pi f_h / D`` on the single scale ``h`` (regime 1)."""
    z, alpha, mu = couplings
    top = aperture(r, gamma) * gamma ** (h + 1)

    def fn(k0):
        return _ratio(f_scale(h, k0, q[None, :], r, gamma, couplings),
                      denominator(k0, q[None, :], r, gamma, h, couplings)).real
    return _k0_integral(fn, top / (1.0 + z) * 1.001)


def occupation_ir(q, r, gamma):
    """``int dk0/2pi chi_{<=0} / D`` with the bare denominator."""
    top = aperture(r, gamma) * gamma

    def fn(k0):
        return _ratio(chi_leq(0, k0, q[None, :], r, gamma),
                      denominator(k0, q[None, :], r, gamma)).real
    return _k0_integral(fn, top * 1.001)


def _smooth_first_order(k, q, m, lam, v):
    """``2 lam int dq/2pi (v_hat(0) - v_hat(k-q)) m(q)`` by the trapezoid rule on ``q``."""
    k = np.atleast_1d(np.asarray(k, dtype=float))
    w = np.full(q.size, q[1] - q[0])
    w[0] *= 0.5
    w[-1] *= 0.5
    dv = potential_fourier(v, 0.0) - potential_fourier(v, k[:, None] - q[None, :])
    return 2 * lam * (dv * (w * m)[None, :]).sum(axis=1) / (2 * math.pi)


def first_order_scale(h, k, lam, r, gamma, couplings=(0.0, 0.0, 0.0), v=(0.0, 0.5), nq=801):
    """First-order kernel ``W1^(h)(k)`` with the dressed single-scale propagator."""
    if lam == 0.0:
        return np.zeros(np.atleast_1d(k).shape)
    z, alpha, mu = couplings
    top = aperture(r, gamma) * gamma ** (h + 1)
    qm = _q_support(top, r + gamma ** h * mu, alpha) * 1.001
    q = np.linspace(-min(qm, math.pi), min(qm, math.pi), nq)
    m = occupation_scale(h, q, r, gamma, couplings)
    return _smooth_first_order(k, q, m, lam, v)


def occupation_uv(q, r, gamma, n=2049):
    """Ultraviolet occupation ``int dk0/2pi (1 - chi_{<=0}) / D`` (zero temperature).

    The integrand vanishes near ``D = 0`` so it is smooth in ``q``; beyond
    ``|k0| = 2 a0 gamma`` the cutoff is zero and the tail is done in closed
    form, ``atan(E / K) / pi`` with ``E`` the real part of ``D``.
    """
    kmax = 2 * aperture(r, gamma) * gamma
    e = np.cos(q) - 1.0 + r
    k0 = np.linspace(-kmax, kmax, n)[:, None]
    body = _ratio(1.0 - chi_leq(0, k0, q[None, :], r, gamma), k0 ** 2 + e[None, :] ** 2)
    body = body * e[None, :]
    w = np.full(n, 2 * kmax / (n - 1))
    w[0] *= 0.5
    w[-1] *= 0.5
    return np.tensordot(w, body, axes=1) / (2 * math.pi) + np.arctan(e / kmax) / math.pi


def first_order_uv(k, lam, r, gamma, v=(0.0, 0.5), nq=2048):
    """Ultraviolet first-order kernel plus the ``lam v_hat(0)`` counterterm."""
    if lam == 0.0:
        return np.zeros(np.atleast_1d(k).shape)
    q = -math.pi + 2 * math.pi * np.arange(nq) / nq
    m = occupation_uv(q, r, gamma)
    k = np.atleast_1d(np.asarray(k, dtype=float))
    dv = potential_fourier(v, 0.0) - potential_fourier(v, k[:, None] - q[None, :])
    return lam * potential_fourier(v, 0.0) + 2 * lam * (dv * m[None, :]).mean(axis=1)


# ---------------------------------------------------------------- regime 1: second order

def r1_box(h, top, r, gamma, size=32.0):
    """Lattice box for lines on scales ``h..top`` (bare cutoffs)."""
    a0 = aperture(r, gamma)
    beta = size / (a0 * gamma ** h)
    omega = a0 * gamma ** (top + 1)
    n0 = _pow2(1.1 * 3 * omega * beta / math.pi + 8)
    n1 = int(_pow2(size * max(1.0, 1.0 / math.sqrt(a0 * gamma ** h))))
    return Box(beta, n0, n1, 1.0)


def _r1_lines(box, lo, hi, r, gamma):
    k0, k = box.mesh()
    chi = chi_leq(hi, k0, k, r, gamma) - chi_leq(lo - 1, k0, k, r, gamma)
    return _ratio(chi, denominator(k0, k, r, gamma))


def second_order_r1(h, points, lam, r, gamma, v=(0.0, 0.5), depth=4, size=32.0):
    """Second-order ``W2^(h)`` at ``points = (k0s, ks)``.

    Lines run over scales ``h..min(0, h + depth)``; the kernel is the
    difference of the diagrams with all lines in ``[h, top]`` and in
    ``[h+1, top]``, i.e. the diagrams with at least one line on scale ``h``.
    """
    k0s, ks = points
    if lam == 0.0:
        return np.zeros(len(k0s), dtype=complex), {}
    top = min(0, h + depth)
    box = r1_box(h, top, r, gamma, size)
    u = interaction_range(lam, v)
    out = np.zeros(len(k0s), dtype=complex)
    for lo, sgn in ((h, 1.0), (h + 1, -1.0)):
        if lo > top:
            continue
        gp, gm = box.propagators(_r1_lines(box, lo, top, r, gamma))
        out += sgn * box.transform(sigma_lattice(gp, gm, u), k0s, ks)
    return out, {"beta_box": box.beta, "n0": box.n0, "n1": box.n1, "top": top}


def kernel_w2_order2(h, lam, r, gamma, couplings=(0.0, 0.0, 0.0), v=(0.0, 0.5),
                     depth=4, size=32.0, second=True, check=True):
    """Regime-1 kernel ``W^(h)`` (first plus second order) on the localisation stencil.

    The steps are ``d0 = 1e-2 a0 gamma^h`` and ``d1 = 1e-2 sqrt(a0 gamma^h)``.
    With ``check`` the second derivative is recomputed with doubled steps and
    :class:`QuadratureError` is raised when the two disagree by more than
    ``1e-3`` relative.
    """
    if lam == 0.0:
        return zero_kernel(h)
    a0 = aperture(r, gamma)
    d0 = 1e-2 * a0 * gamma ** h
    d1 = 1e-2 * math.sqrt(a0 * gamma ** h)
    offs = np.array(_OFF, dtype=float)
    k_pts = np.concatenate([offs * d1, 2 * offs * d1])
    first_k = first_order_scale(h, k_pts, lam, r, gamma, couplings, v)
    first_0 = np.full(5, first_k[2], dtype=complex)
    meta = {"d0": d0, "d1": d1}
    sec0 = np.zeros(5, dtype=complex)
    seck = np.zeros(10, dtype=complex)
    if second:
        k0s = np.concatenate([offs * d0, np.zeros(10)])
        ks = np.concatenate([np.zeros(5), k_pts])
        vals, info = second_order_r1(h, (k0s, ks), lam, r, gamma, v, depth, size)
        sec0, seck = vals[:5], vals[5:]
        meta.update(info)
    k_all = first_k + seck
    ker = SecondOrderKernel(h, d0, d1, first_0 + sec0, k_all[:5], first_k[:5].astype(complex), meta)
    if check:
        coarse = central_second(k_all[5:], 2 * d1)
        fine = ker.d_kk
        scale = max(abs(fine), abs(coarse), 1e-300)
        if abs(fine - coarse) > 1e-3 * scale + 1e-14:
            raise QuadratureError(
                f"scale {h}: second derivative unstable on the stencil ({fine} vs {coarse})")
    return ker


# ---------------------------------------------------------------- regime 1: flow

def localize_r1(kernel: SecondOrderKernel):
    """Local coefficients ``(W(0), z-update, alpha-update)`` of a regime-1 kernel.

    With ``D = -i k0 (1+z) + (1+alpha)(cos k - 1) + ...`` and ``W`` added to
    ``D``: ``dz = i dW/dk0``, ``d alpha = -d^2W/dk^2`` (the coefficient of
    ``cos k - 1``).  ``W(0)`` enters the ``mu`` update through
    :func:`apply_r1`.
    """
    if kernel.meta.get("zero"):
        return 0.0, 0.0, 0.0
    return kernel.value.real, (1j * kernel.d_k0).real, -kernel.d_kk.real


def apply_r1(h, couplings, updates, gamma):
    """``(z, alpha, mu)`` on scale ``h - 1`` from the local part on scale ``h``.

    ``gamma^(h-1) mu_{h-1} = gamma^h mu_h + W(0)``.
    """
    z, alpha, mu = couplings
    w0, dz, da = updates
    return (z + dz, alpha + da, gamma * mu + gamma ** (1 - h) * w0)


@dataclass
class FlowR1:
    """Regime-1 trajectory: ``rows[h] = (z, alpha, mu)`` on scale ``h`` plus kernel data."""

    lam: float
    r: float
    gamma: float
    hstar: float
    rows: dict
    kernels: dict
    initial: tuple
    critical_shift: float = 0.0

    @property
    def last(self):
        return self.rows[min(self.rows)]

    @property
    def h_end(self):
        return min(self.rows)

    def summary(self):
        hs = None if math.isinf(self.hstar) else int(self.hstar)
        return {"schema_version": SCHEMA_VERSION, "lam": self.lam, "r": self.r,
                "gamma": self.gamma, "hstar": hs, "h_end": self.h_end,
                "critical_shift": self.critical_shift, "max_abs_coupling": max(
                    max(abs(x) for x in c) for c in self.rows.values())}

    def write(self, csv_path, json_path):
        rows = [(h, *self.rows[h], None, None, None, None)
                for h in sorted(self.rows, reverse=True)]
        write_flow_csv(csv_path, rows)
        with open(json_path, "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)


FLOW_COLUMNS = ("h", "z", "alpha", "mu", "lambda", "delta", "nu", "Z")


def write_flow_csv(path, rows):
    """RFC-4180 table of flow rows; ``None`` becomes an empty field."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(FLOW_COLUMNS)
        for row in rows:
            w.writerow([row[0]] + ["" if x is None else repr(float(x)) for x in row[1:]])


def regime1_stop(r, gamma, floor=-8):
    """Last regime-1 scale integrated: ``h* + 1`` for ``r > 0``, ``h*`` for ``r < 0``, ``floor`` at 0."""
    if r == 0:
        return floor
    hs = crossover_scale(r, gamma)
    return hs + 1 if r > 0 else hs


def _run_r1(lam, r, gamma, v, stop, bound, second, depth, size, shift):
    d1 = 1e-2
    uv = first_order_uv(np.array(_OFF, dtype=float) * d1, lam, r, gamma, v)
    c = (0.0, -central_second(uv, d1), uv[2] + shift)
    rows = {0: c}
    kernels = {}
    for h in range(0, stop - 1, -1):
        ker = kernel_w2_order2(h, lam, r, gamma, c, v, depth, size, second)
        kernels[h] = ker
        c = apply_r1(h, c, localize_r1(ker), gamma)
        if max(abs(x) for x in c) > bound * abs(lam):
            raise FlowError(f"scale {h - 1}: couplings {c} exceed {bound}|lam|")
        rows[h - 1] = c
    return rows, kernels


def flow_regime1(lam, r, gamma=2.0, v=(0.0, 0.5), floor=-8, bound=50.0,
                 second=True, depth=4, size=32.0, tune=None):
    """Iterate the regime-1 couplings from the ultraviolet down to ``h*``.

    Initial data on scale 0 come from the ultraviolet first-order kernel and
    the counterterm.  Each scale ``h`` integrates ``W^(h)`` built with the
    couplings of scale ``h``.  Raises :class:`FlowError` if any coupling
    exceeds ``bound |lam|``.

    At ``r = 0`` (``tune`` defaults to true there) the truncation leaves an
    ``O(lam^2)`` residue in the relevant direction; one secant step on the
    initial ``mu`` removes it so that ``mu`` vanishes on the last scale.  The
    shift is returned as ``critical_shift``.
    """
    if not -0.5 <= r <= 0.5:
        raise ValueError(f"regime-1 flow needs |r| <= 1/2, got r={r}")
    hstar = crossover_scale(r, gamma)
    stop = regime1_stop(r, gamma, floor)
    if lam == 0.0:
        rows = {h: (0.0, 0.0, 0.0) for h in range(0, min(stop, 0) - 2, -1)}
        return FlowR1(lam, r, gamma, hstar, rows, {}, (0.0, 0.0, 0.0))
    if tune is None:
        tune = r == 0
    args = (lam, r, gamma, v, stop, bound * (4 if tune else 1), second, depth, size)
    shift = 0.0
    if tune:
        rows, _ = _run_r1(*args, 0.0)
        end = min(rows)
        shift = -gamma ** end * rows[end][2]
    rows, kernels = _run_r1(*args, shift)
    end = min(rows)
    if max(abs(x) for x in rows[end]) > bound * abs(lam):
        raise FlowError(f"scale {end}: couplings {rows[end]} exceed {bound}|lam|")
    return FlowR1(lam, r, gamma, hstar, rows, kernels, rows[0], shift)


# ---------------------------------------------------------------- regime 1: two-point function

@dataclass
class TwoPointR1:
    """Assembled ``S_hat`` on a list of points with ``Q`` diagnostics."""

    k0: np.ndarray
    k: np.ndarray
    values: np.ndarray
    q_dev: dict
    flow: FlowR1

    def residual(self, alpha):
        return critical_residual(self.values, self.k0, self.k, alpha)

    def fit_alpha(self):
        return fit_critical_alpha(self.values, self.k0, self.k)


def critical_residual(values, k0, k, alpha):
    """``|S_hat (-i k0 + alpha (cos k - 1)) - 1|`` per point."""
    return np.abs(values * (-1j * np.asarray(k0) + alpha * (np.cos(k) - 1.0)) - 1.0)


def fit_critical_alpha(values, k0, k):
    """Least-squares ``alpha`` in ``S_hat (-i k0 + alpha (cos k - 1)) = 1``."""
    values = np.asarray(values)
    a = values * (np.cos(k) - 1.0)
    b = 1.0 + 1j * np.asarray(k0) * values
    num = float(np.sum((np.conj(a) * b).real))
    den = float(np.sum(np.abs(a) ** 2))
    return num / den if den > 0 else 1.0


def two_point_regime1(k0, k, lam, r, gamma=2.0, v=(0.0, 0.5), floor=-8, flow=None,
                      second=True, depth=4, size=32.0):
    """Interacting ``S_hat(kk)`` for ``r <= 0`` from the regime-1 kernels.

    ``S_hat^-1 = D + W_uv + sum_h W^(h)`` with every ``W^(h)`` evaluated at
    ``kk`` (not only its local part), using the couplings of the flow.  At
    ``r = 0`` points with ``|D| < a0 gamma^(floor+2)`` lie below the resolved
    scales and are refused.  ``q_dev[h]`` is
    ``|Q^(h) - 1| = |g^[h,0](kk) W^[>h](kk)|`` maximised over the points.
    """
    if r > 0:
        raise ValueError("the regime-1 assembly covers r <= 0")
    k0 = np.atleast_1d(np.asarray(k0, dtype=float))
    k = np.atleast_1d(np.asarray(k, dtype=float))
    d = denominator(k0, k, r, gamma)
    a0 = aperture(r, gamma)
    if r == 0 and np.any(np.abs(d) < a0 * gamma ** (floor + 2)):
        raise ValueError(f"points below the resolved scale floor {floor}")
    if flow is None:
        flow = flow_regime1(lam, r, gamma, v, floor, second=second, depth=depth, size=size)
    if lam == 0.0:
        return TwoPointR1(k0, k, 1.0 / d, {}, flow)
    w = first_order_uv(k, lam, r, gamma, v) + flow.critical_shift
    q_dev = {}
    for h in sorted(flow.kernels, reverse=True):
        c = flow.rows[h]
        g_above = (chi_leq(0, k0, k, r, gamma) - chi_leq(h - 1, k0, k, r, gamma)) / d
        q_dev[h] = float(np.max(np.abs(g_above * w)))
        wh = first_order_scale(h, k, lam, r, gamma, c, v).astype(complex)
        if second:
            wh = wh + second_order_r1(h, (k0, k), lam, r, gamma, v, depth, size)[0]
        w = w + wh
    return TwoPointR1(k0, k, 1.0 / (d + w), q_dev, flow)


# ---------------------------------------------------------------- regime 2: coefficient tables

def _qp_span(top, r):
    """Largest ``|k'|`` in the support of the ``omega = +1`` cutoff below ``top``.

    The dispersion condition is ``|cos(p_F + k') - cos p_F| <= top``; the
    splitter vanishes for ``k < -p_F / 2``, i.e. ``k' < -3 p_F / 2``.
    """
    p_f, _ = fermi_data(r)
    c = math.cos(p_f)
    lo = math.acos(min(1.0, c + top)) - p_f
    if c + top >= 1.0:
        lo = -1.5 * p_f
    hi = math.acos(max(-1.0, c - top)) - p_f
    return max(abs(lo), abs(hi))


def r2_box(h, top, r, gamma, size=32.0):
    """Continuum box for quasi-particle lines on scales ``h..top``."""
    _, v_f = fermi_data(r)
    a0 = aperture(r, gamma)
    beta = size / (a0 * gamma ** h)
    length = size * v_f / (a0 * gamma ** h)
    omega = a0 * gamma ** (top + 1)
    n0 = _pow2(1.1 * 3 * omega * beta / math.pi + 8)
    span = _qp_span(omega, r)
    n1 = _pow2(1.1 * 3 * span * length / math.pi + 8)
    return Box(beta, n0, n1, length / n1)


def qp_lines(k0, kp, omega, lo, hi, r, gamma, linear=False):
    """``g_omega`` with lines on scales ``lo..hi`` at ``(k0, k')``, ``k' = k - omega p_F``."""
    p_f, v_f = fermi_data(r)
    a0 = aperture(r, gamma)
    if linear:
        d = -1j * k0 - omega * v_f * kp
        mod = np.abs(d) / a0
        chi = chi0(mod / gamma ** hi, gamma) - chi0(mod / gamma ** (lo - 1), gamma)
        return _ratio(chi, d)
    k = omega * p_f + kp
    chi = (chi_leq(hi, k0, k, r, gamma) - chi_leq(lo - 1, k0, k, r, gamma)) * theta_split(
        omega * k / p_f)
    return _ratio(chi, denominator(k0, k, r, gamma))


@dataclass
class R2Coefficients:
    """Second-order coefficients of one regime-2 scale (per unit couplings).

    ``sunset``: ``(a, b, w0)`` per unit ``U^2``, the ``-i k0`` and ``omega k'``
    coefficients and the value at 0 of the ``omega = +1`` sunset;
    ``tadpole``: ``(m1, m2, m3)`` = ``int g``, ``int g^2`` and
    ``int g^2 omega k'`` of the opposite chirality on scale ``h``;
    ``bubbles``: ``(I_pp, I_ph)`` with at least one line on scale ``h``.
    """

    h: int
    sunset: tuple
    tadpole: tuple
    bubbles: tuple
    meta: dict


def _qp_integrals(h, r, gamma, linear, n=257):
    """Momentum integrals of the single-scale quasi-particle propagator on a fine grid."""
    _, v_f = fermi_data(r)
    a0 = aperture(r, gamma)
    top = a0 * gamma ** (h + 1)
    span = _qp_span(top, r) * 1.01
    k0 = np.linspace(-top * 1.01, top * 1.01, n)
    kp = np.linspace(-span, span, n)
    K0, KP = np.meshgrid(k0, kp, indexing="ij")
    wt = np.outer(_trap(k0), _trap(kp)) / (2 * math.pi) ** 2
    g = qp_lines(K0, KP, -1, h, h, r, gamma, linear)
    m1 = float(np.sum(wt * g).real)
    m2 = float(np.sum(wt * g * g).real)
    m3 = float(np.sum(wt * g * g * (-1) * KP).real)
    return m1, m2, m3


def _trap(x):
    w = np.full(x.size, x[1] - x[0])
    w[0] *= 0.5
    w[-1] *= 0.5
    return w


def graded_grid(fine, extent, gamma, per=48):
    """Symmetric grid, uniform on ``[0, fine]`` and on each shell ``fine gamma^j``.

    Returns nodes and composite Simpson weights; a line at scale ``fine`` is
    resolved by ``per`` points however far ``extent`` lies above it.
    """
    per += per % 2
    edges = [0.0, fine]
    while edges[-1] < extent:
        edges.append(min(edges[-1] * gamma, extent))
    simpson = np.ones(per + 1)
    simpson[1:-1:2] = 4.0
    simpson[2:-1:2] = 2.0
    nshell = len(edges) - 1
    pos = np.zeros(nshell * per + 1)
    wpos = np.zeros_like(pos)
    for i, (a, b) in enumerate(zip(edges, edges[1:])):
        sl = slice(i * per, (i + 1) * per + 1)
        pos[sl] = np.linspace(a, b, per + 1)
        wpos[sl] += simpson * (b - a) / (3 * per)
    x = np.concatenate([-pos[:0:-1], pos])
    w = np.concatenate([wpos[:0:-1], wpos])
    w[nshell * per] *= 2
    return x, w


def _bubbles(h, top, r, gamma, linear, per=48):
    """``I_pp = int g_+(k) g_-(-k)``, ``I_ph = int g_+(k) g_-(k)`` with a line on scale ``h``."""
    _, v_f = fermi_data(r)
    a0 = aperture(r, gamma)
    om = a0 * gamma ** (top + 1)
    fine = a0 * gamma ** (h - 1)
    k0, w0 = graded_grid(fine, om * 1.01, gamma, per)
    kp, w1 = graded_grid(fine / v_f, _qp_span(om, r) * 1.01, gamma, per)
    K0, KP = np.meshgrid(k0, kp, indexing="ij")
    wt = np.outer(w0, w1) / (2 * math.pi) ** 2
    out = []
    for sgn in (-1.0, 1.0):
        tot = 0.0
        for lo, s in ((h, 1.0), (h + 1, -1.0)):
            if lo > top:
                continue
            gp = qp_lines(K0, KP, 1, lo, top, r, gamma, linear)
            gm = qp_lines(sgn * K0, sgn * KP, -1, lo, top, r, gamma, linear)
            tot += s * float(np.sum(wt * gp * gm).real)
        out.append(tot)
    return tuple(out)


def r2_coefficients(h, r, gamma=2.0, hstar=None, depth=4, size=32.0, linear=False):
    """Second-order coefficient table of regime-2 scale ``h``.

    Lines run over ``h..min(h*, h + depth)``; the kernels are differences of
    the diagrams with all lines in ``[h, top]`` and ``[h+1, top]``.
    """
    if hstar is None:
        hstar = crossover_scale(r, gamma)
    if h > hstar:
        raise ValueError(f"scale {h} is above h* = {hstar}")
    _, v_f = fermi_data(r)
    a0 = aperture(r, gamma)
    top = min(hstar, h + depth)
    box = r2_box(h, top, r, gamma, size)
    k0g, kpg = box.mesh()
    d0 = 1e-2 * a0 * gamma ** h
    d1 = d0 / v_f
    offs = np.array(_OFF, dtype=float)
    k0s = np.concatenate([offs * d0, np.zeros(5)])
    kps = np.concatenate([np.zeros(5), offs * d1])
    vals = np.zeros(10, dtype=complex)
    # g_-(k0, k') = g_+(k0, -k'), so G_-(t, x) = G_+(t, -x)
    flip = (-np.arange(box.n1)) % box.n1
    if linear:
        dd = -1j * k0g - v_f * kpg
        chis = {j: chi0(np.abs(dd) / (a0 * gamma ** j), gamma) for j in (top, h, h - 1)}
        split = 1.0
    else:
        p_f, _ = fermi_data(r)
        dd = denominator(k0g, p_f + kpg, r, gamma)
        chis = {j: chi_leq(j, k0g, p_f + kpg, r, gamma) for j in (top, h, h - 1)}
        split = theta_split((p_f + kpg) / p_f)
    for lo, sgn in ((h, 1.0), (h + 1, -1.0)):
        if lo > top:
            continue
        gp, gm = box.propagators(_ratio((chis[top] - chis[lo - 1]) * split, dd))
        sigma = -gp * gp[:, flip] * gm[:, flip]   # per unit U^2
        vals += sgn * box.transform(sigma, k0s, kps)
    a = (1j * central_first(vals[:5], d0)).real
    b = central_first(vals[5:], d1).real   # omega = +1
    w0 = vals[2].real
    return R2Coefficients(
        h, (a, b, w0), _qp_integrals(h, r, gamma, linear), _bubbles(h, top, r, gamma, linear),
        {"n0": box.n0, "n1": box.n1, "top": top, "w0_imag": float(vals[2].imag)})


@lru_cache(maxsize=64)
def _r2_table(r, gamma, hstar, hmin, depth, size, linear):
    return tuple(r2_coefficients(h, r, gamma, hstar, depth, size, linear)
                 for h in range(hstar, hmin - 1, -1))


def r2_table(r, gamma, hstar, hmin, depth=4, size=24.0, linear=False):
    """Coefficient tables for scales ``h* .. hmin`` (cached; independent of ``lam``)."""
    return _r2_table(float(r), float(gamma), int(hstar), int(hmin), int(depth), float(size),
                     bool(linear))


# ---------------------------------------------------------------- regime 2: flow

@dataclass
class RunningCouplingsR2:
    """Regime-2 couplings on scale ``h``; ``lam`` multiplies ``psi+_1 psi-_1 psi+_-1 psi-_-1``."""

    h: int
    lam: float
    delta: float
    nu: float
    Z: float


def initial_couplings_r2(lam, p_f, v=(0.0, 0.5), v_f_free=None, v_f_int=None, h=0):
    """Couplings on scale ``h*``: ``lam_h* = lam (v_hat(0) - v_hat(2 p_F))``, ``Z = 1``.

    ``delta_h*`` is the shift of the Fermi velocity produced by the regime-1
    flow, ``v_F(interacting) - v_F(free)``; ``nu_h*`` is fixed later by
    shooting.
    """
    lam_h = lam * (potential_fourier(v, 0.0) - potential_fourier(v, 2 * p_f))
    delta = 0.0
    if v_f_free is not None and v_f_int is not None and lam != 0.0:
        delta = v_f_int - v_f_free
    return RunningCouplingsR2(h, float(lam_h), float(delta), 0.0, 1.0)


def beta_r2(h, c: RunningCouplingsR2, coeff: R2Coefficients, v_f, gamma=2.0):
    """Second-order increments ``(beta_lam, beta_delta, beta_nu, beta_z)`` on scale ``h``.

    With ``U = -2 lam_h``: the sunset gives ``a U^2 (-i k0) + b U^2 omega k'``
    and ``w0 U^2`` at zero momentum; the tadpole gives ``-U m`` with ``m`` the
    single-scale occupation dressed by ``nu`` and ``delta`` to first order;
    the ladders give ``delta U = -U^2 (I_pp + I_ph)``.  Fields are then
    rescaled so that the ``-i k0`` coefficient stays 1:

        Z_{h-1} = Z_h (1 + a U^2)
        lam_{h-1} = (lam_h + 2 lam_h^2 (I_pp + I_ph)) / (1 + a U^2)^2
        v_F + delta_{h-1} = (v_F + delta_h - b U^2) / (1 + a U^2)
        nu_{h-1} = (gamma nu_h + gamma^(1-h) W(0)) / (1 + a U^2)

    The returned increments are ``lam_{h-1} - lam_h``, ``delta_{h-1} - delta_h``,
    ``nu_{h-1} - gamma nu_h`` and ``a U^2``.
    """
    u = -2.0 * c.lam
    a_s, b_s, w0_s = coeff.sunset
    m1, m2, m3 = coeff.tadpole
    ipp, iph = coeff.bubbles
    a = a_s * u * u
    m = m1 - gamma ** h * c.nu * m2 + c.delta * m3
    w0 = w0_s * u * u - u * m
    lam_new = (c.lam + 2 * c.lam ** 2 * (ipp + iph)) / (1 + a) ** 2
    delta_new = (v_f + c.delta - b_s * u * u) / (1 + a) - v_f
    nu_new = (gamma * c.nu + gamma ** (1 - h) * w0) / (1 + a)
    return lam_new - c.lam, delta_new - c.delta, nu_new - gamma * c.nu, a


def _run_r2(start: RunningCouplingsR2, table, v_f, gamma):
    traj = [start]
    c = start
    for coeff in table:
        bl, bd, bn, bz = beta_r2(coeff.h, c, coeff, v_f, gamma)
        c = RunningCouplingsR2(coeff.h - 1, c.lam + bl, c.delta + bd,
                               gamma * c.nu + bn, c.Z * (1 + bz))
        traj.append(c)
    return traj


def nu_shooting(start: RunningCouplingsR2, table, v_f, gamma=2.0, lam=None, bound=50.0):
    """``nu_h*`` such that ``nu`` vanishes on the last scale of ``table``.

    ``nu`` enters its own recursion affinely and nothing else depends on it,
    so two trial runs determine ``nu_hmin`` as an affine function of
    ``nu_h*``; the root is then checked by a third run.  Returns
    ``(nu_h*, trajectory, info)``.
    """
    def end(nu0):
        s = RunningCouplingsR2(start.h, start.lam, start.delta, nu0, start.Z)
        return _run_r2(s, table, v_f, gamma)
    t0 = end(0.0)
    t1 = end(1.0)
    slope = t1[-1].nu - t0[-1].nu
    nu = -t0[-1].nu / slope if slope != 0 else 0.0
    ref = abs(lam) if lam is not None else max(abs(start.lam), 1e-300)
    if abs(nu) > bound * max(ref, 1e-300) and ref > 0:
        raise FlowError(f"nu shooting: |nu_h*| = {abs(nu):.3e} exceeds {bound}|lam|")
    traj = end(nu)
    return nu, traj, {"slope": slope, "residual": traj[-1].nu, "multiplier": slope ** (1 / len(table))}


@dataclass
class FlowTrajectory:
    """Both regimes of one run, the crossover data and the extracted ``eta``."""

    lam: float
    r: float
    gamma: float
    hstar: int
    p_f: float
    v_f: float
    regime1: FlowR1
    regime2: list
    eta: float
    shooting: dict

    def rows(self):
        """Rows ``(h, z, alpha, mu, lambda, delta, nu, Z)``; inapplicable fields are ``None``."""
        out = []
        for h in sorted(self.regime1.rows, reverse=True):
            if h < self.hstar:
                continue
            z, a, m = self.regime1.rows[h]
            out.append((h, z, a, m, None, None, None, None))
        for c in self.regime2:
            out.append((c.h, None, None, None, c.lam, c.delta, c.nu, c.Z))
        return out

    def summary(self):
        return {"schema_version": SCHEMA_VERSION, "lam": self.lam, "r": self.r,
                "gamma": self.gamma, "hstar": self.hstar, "p_F": self.p_f, "v_F": self.v_f,
                "eta": self.eta, "b_fit": self.eta / (self.lam ** 2 * self.r) if self.lam else 0.0,
                "shooting": self.shooting}

    def write(self, csv_path, json_path):
        write_flow_csv(csv_path, self.rows())
        with open(json_path, "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)


def eta_from_z(traj, gamma, window=10):
    """Mean of ``log_gamma(Z_{h-1} / Z_h)`` over the last ``window`` steps."""
    zs = np.array([c.Z for c in traj])
    steps = np.log(zs[1:] / zs[:-1]) / math.log(gamma)
    return float(np.mean(steps[-window:]))


def flow_regime2(lam, r, gamma=2.0, v=(0.0, 0.5), depth_below=24, window=10,
                 bound=4.0, nu_bound=50.0, second_r1=True, depth=4, size=24.0, floor=-8):
    """Regime-1 flow to ``h*``, crossover data, ``nu`` shooting and regime-2 flow.

    Runs ``h* -> h* - depth_below``.  The bound ``|lam_h|, |delta_h| <=
    bound |lam| r^(3/4)`` is asserted on every scale.
    """
    if not 0 < r <= 0.5:
        raise ValueError(f"regime 2 needs 0 < r <= 1/2, got r={r}")
    hstar = crossover_scale(r, gamma)
    hmin = hstar - depth_below
    p0, vf0 = fermi_data(r)
    f1 = flow_regime1(lam, r, gamma, v, floor, second=second_r1, depth=4, size=32.0)
    z1, alpha, mu = f1.rows[min(f1.rows)] if lam else (0.0, 0.0, 0.0)
    table = r2_table(r, gamma, hstar, hmin + 1, depth, size)
    nu = 0.0
    for _ in range(2):
        p_f = solve_interacting_pf(lam, r, alpha, mu, nu, gamma, hstar) if lam else p0
        v_f = (1 + alpha) * math.sin(p_f)
        start = initial_couplings_r2(lam, p_f, v, vf0, v_f, hstar)
        if lam == 0.0:
            traj = _run_r2(start, table, vf0, gamma)
            info = {"slope": gamma ** len(table), "residual": 0.0, "multiplier": gamma}
            break
        nu, traj, info = nu_shooting(start, table, vf0, gamma, lam, nu_bound)
    lim = bound * abs(lam) * r ** 0.75
    for c in traj:
        if abs(c.lam) > lim or abs(c.delta) > lim:
            raise FlowError(f"scale {c.h}: lambda={c.lam:.3e}, delta={c.delta:.3e} exceed {lim:.3e}")
    eta = eta_from_z(traj, gamma, window)
    info = dict(info, nu_hstar=nu)
    return FlowTrajectory(lam, r, gamma, hstar, p_f if lam else p0, v_f if lam else vf0,
                          f1, traj, eta, info)
