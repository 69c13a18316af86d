"""Free-theory objects of the chain: dispersion, Fermi data, Schwinger functions.

Conventions
-----------
Hamiltonian ``H = -sum_x [ (a+_{x+1} a_x + h.c.)/2 + h n_x ] - lam sum_{x,y} v(x-y) n_x n_y``
with ``h = -1 + r`` and periodic fermionic boundary conditions.  The one-body
energy is ``eps(k) = -cos k - h``.

Time-ordered Schwinger function ``S(x0, x) = <T a_x(x0) a+_0>``.  Its momentum
representation is fixed so that the free theory reads
``S0_hat(k0, k) = 1 / (-i k0 + cos k + h)``, which requires

    S(x0, x)  = -(1 / beta L) sum_{kk} exp(i (k0 x0 + k x)) S_hat(kk)
    S_hat(kk) = -int_0^beta dx0 sum_x exp(-i (k0 x0 + k x)) S(x0, x)

on the fermionic grid ``k0 = (2 pi / beta)(n + 1/2)``, ``k = 2 pi m / L``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from ._accel import USE_NUMBA, jit


class NoFermiPoint(ValueError):
    """Raised when the band has no Fermi point (insulating parameters)."""


@dataclass(frozen=True)
class ModelParams:
    """Physical and regularisation parameters of the chain.

    ``potential`` holds the one-sided values ``(v(0), v(1), ..., v(R))``; the
    potential is even by construction.  The default is the symmetrised
    nearest-neighbour potential ``v(+-1) = 1/2``.
    """

    lam: float = 0.0
    r: float = 0.25
    gamma: float = 2.0
    L: int = 16
    beta: float = 32.0
    M: int = 8
    potential: tuple = (0.0, 0.5)

    def __post_init__(self):
        if not 1.0 < self.gamma <= 2.0:
            raise ValueError(f"gamma must lie in (1, 2], got {self.gamma}")
        if self.L < 1 or int(self.L) != self.L:
            raise ValueError(f"L must be a positive integer, got {self.L}")
        if self.beta <= 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if self.M < 1:
            raise ValueError(f"M must be a positive integer, got {self.M}")
        if not -2.0 < self.r < 2.0:
            raise ValueError(f"r must lie in (-2, 2), got {self.r}")
        v = tuple(float(c) for c in self.potential)
        if not v:
            raise ValueError("potential must have at least one entry")
        object.__setattr__(self, "potential", v)

    @property
    def h(self) -> float:
        return -1.0 + self.r

    def require_rg_range(self):
        """The multiscale analysis is set up for ``|r| <= 1/2``."""
        if abs(self.r) > 0.5:
            raise ValueError(f"multiscale analysis needs |r| <= 1/2, got r={self.r}")
        return self


def potential_values(v) -> dict:
    """Two-sided map ``x -> v(x)`` from one-sided values."""
    out = {}
    for x, c in enumerate(v):
        if c != 0.0:
            out[x] = c
            out[-x] = c
    return out


def dispersion(k, r):
    """``eps(k) = -cos k - h`` with ``h = -1 + r``."""
    return -np.cos(k) + 1.0 - r


def fermi_data(r):
    """Fermi momentum and velocity ``(p_F, v_F)`` of the free band.

    Raises :class:`NoFermiPoint` outside the metallic window ``0 < r < 2``.
    """
    if not 0.0 < r < 2.0:
        raise NoFermiPoint(f"no Fermi point for r={r}")
    p_f = math.acos(1.0 - r)
    v_f = math.sqrt(r * (2.0 - r))
    return p_f, v_f


def potential_fourier(v, k):
    """``v_hat(k) = sum_x v(x) exp(-i k x)``, real because ``v`` is even."""
    k = np.asarray(k, dtype=float)
    out = np.full(k.shape, float(v[0]))
    for x in range(1, len(v)):
        out = out + 2.0 * v[x] * np.cos(x * k)
    return out if out.ndim else float(out)


def momentum_grid(L):
    """Spatial momenta ``2 pi m / L`` in ``[-pi, pi)``."""
    m = np.arange(L) - L // 2
    return 2.0 * np.pi * m / L


def matsubara_grid(beta, n_max):
    """Fermionic frequencies ``(2 pi / beta)(n + 1/2)`` for ``-n_max <= n < n_max``."""
    n = np.arange(-n_max, n_max)
    return 2.0 * np.pi / beta * (n + 0.5)


def free_propagator_momentum(k0, k, r):
    """``S0_hat(k0, k) = 1 / (-i k0 + cos k + h)``."""
    return 1.0 / (-1j * np.asarray(k0) + np.cos(k) - 1.0 + r)


def _occupation_factor(tau, eps, beta):
    # exp(-tau eps) / (1 + exp(-beta eps)) for 0 < tau < beta, overflow-safe
    if eps >= 0.0:
        return math.exp(-tau * eps) / (1.0 + math.exp(-beta * eps))
    return math.exp((beta - tau) * eps) / (math.exp(beta * eps) + 1.0)


@jit
def _kahan_time_sum(tau, x, ks, eps, beta):
    # compensated sum over k of cos(k x) * (one-sided S0 summand); 0 < tau < beta
    s = 0.0
    c = 0.0
    for i in range(ks.shape[0]):
        e = eps[i]
        if e >= 0.0:
            w = math.exp(-tau * e) / (1.0 + math.exp(-beta * e))
        else:
            w = math.exp((beta - tau) * e) / (math.exp(beta * e) + 1.0)
        term = math.cos(ks[i] * x) * w
        y = term - c
        t = s + y
        c = (t - s) - y
        s = t
    return s


def _time_sum(tau, x, ks, eps, beta):
    if USE_NUMBA:
        return _kahan_time_sum(tau, x, ks, eps, beta)
    return math.fsum(math.cos(k * x) * _occupation_factor(tau, e, beta)
                     for k, e in zip(ks, eps))


def _reduce_time(x0, beta):
    """Map ``x0`` into ``(-beta, beta]`` using the ``2 beta`` periodicity."""
    x0 = math.fmod(x0, 2.0 * beta)
    if x0 > beta:
        x0 -= 2.0 * beta
    elif x0 <= -beta:
        x0 += 2.0 * beta
    return x0


def free_schwinger_time(x0, x, r, L, beta):
    """Free Schwinger function from the explicit occupation-factor formula.

    At ``x0 == 0`` (mod ``beta``) the symmetrised value
    ``(S(0+, x) + S(0-, x)) / 2`` is returned, the M -> infinity limit of
    the cut-off Grassmann propagator.
    """
    x0 = _reduce_time(float(x0), beta)
    ks = momentum_grid(L)
    eps = dispersion(ks, r)
    if x0 == 0.0 or x0 == beta:
        # S(0+) = sum (1 - n_k) ...,  S(0-) = -sum n_k ...
        plus = _time_sum(0.0, x, ks, eps, beta)
        minus = -_time_sum(beta, x, ks, eps, beta)
        val = 0.5 * (plus + minus)
        return val / L if x0 == 0.0 else -val / L
    if x0 > 0.0:
        return _time_sum(x0, x, ks, eps, beta) / L
    return -_time_sum(beta + x0, x, ks, eps, beta) / L


def _matsubara_t(tau, eps, beta, n_max):
    """``(1/beta) sum_n exp(-i w_n tau) / (i w_n - eps)`` for ``0 <= tau < beta``.

    The first three terms of the large-frequency expansion are summed in
    closed form; the remainder ``eps^3 / ((i w)^3 (i w - eps))`` is summed
    directly.  At ``tau == 0`` the symmetrised value is returned.
    """
    w = matsubara_grid(beta, n_max)
    iw = 1j * w
    eps = np.asarray(eps, dtype=float)[:, None]
    rem = eps**3 / (iw**3 * (iw - eps))
    phase = np.exp(-1j * w * tau)
    rest = (rem * phase).sum(axis=1).real / beta
    c2 = tau / 2.0 - beta / 4.0
    c3 = beta * tau / 4.0 - tau * tau / 4.0
    c1 = 0.0 if tau == 0.0 else -0.5
    return c1 + eps[:, 0] * c2 + eps[:, 0] ** 2 * c3 + rest


def free_schwinger_matsubara(x0, x, r, L, beta, n_max=None):
    """Free Schwinger function from the Matsubara series of ``S0_hat``.

    Independent of :func:`free_schwinger_time`: it sums
    ``-(1/beta L) sum_kk exp(i(k0 x0 + k x)) S0_hat(kk)`` with the slowly
    decaying tail handled analytically.
    """
    if n_max is None:
        n_max = max(4096, int(40 * beta))
    x0 = _reduce_time(float(x0), beta)
    flip = 1.0
    if x0 < 0.0:
        x0 += beta
        flip = -1.0
    elif x0 == beta:
        x0 = 0.0
        flip = -1.0
    ks = momentum_grid(L)
    eps = dispersion(ks, r)
    t = _matsubara_t(x0, eps, beta, n_max)
    # substituting k0 -> -k0 turns the S_hat series into -(1/L) sum_k e^{ikx} T
    val = -np.sum(np.cos(ks * x) * t) / L
    return flip * val


def solve_interacting_pf(lam, r, alpha_hstar, mu_hstar, nu_hstar, gamma, hstar):
    """Interacting Fermi momentum from the renormalised dispersion condition.

    Solves ``(1+alpha) cos p_F = (1+alpha) - r - gamma^h* mu + gamma^h* nu``
    for ``p_F`` in ``(0, pi)`` by bracketed root finding.  ``lam`` is
    accepted for signature symmetry; the dependence enters through the
    couplings.
    """
    a = 1.0 + alpha_hstar
    scale = gamma ** hstar
    rhs = a - r - scale * mu_hstar + scale * nu_hstar
    c = rhs / a
    if not -1.0 < c < 1.0:
        raise NoFermiPoint(f"no metallic solution: cos p_F = {c}")

    def f(p):
        return a * math.cos(p) - rhs

    return brentq(f, 0.0, math.pi, xtol=1e-15)
