import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fermichain.model import fermi_data
from fermichain.scales import (PropagatorTable, QuadratureError, aperture, chi0, chi_leq,
                               crossover_scale, cumulative_grid, envelope, f_scale,
                               luttinger_decompose, qp_cumulative_grid, qp_propagator,
                               regime1_grid, regime2_grid, rms_widths, scaling_exponent,
                               single_scale_propagator, smooth_step, support_measure,
                               theta_split)

G = 2.0


def brute_hstar(r, gamma):
    a0 = aperture(r, gamma)
    return min(h for h in range(-200, 5) if a0 * gamma ** (h + 1) > abs(r))


@settings(max_examples=60, deadline=None)
@given(t=st.floats(-3, 3), gamma=st.floats(1.05, 2.0))
def test_chi0_shape(t, gamma):
    v = chi0(t, gamma)
    assert 0.0 <= v <= 1.0
    assert v == chi0(-t, gamma)
    if abs(t) <= 1:
        assert v == 1.0
    if abs(t) >= gamma:
        assert v == 0.0


def test_chi0_monotone_and_split():
    t = np.linspace(1.0, 2.0, 400)
    assert np.all(np.diff(chi0(t, 2.0)) <= 0)
    u = np.linspace(-2, 2, 81)
    np.testing.assert_allclose(theta_split(u) + theta_split(-u), 1.0, atol=1e-15)
    np.testing.assert_allclose(smooth_step(u) + smooth_step(1 - u), 1.0, atol=1e-15)


def test_chi_leq_examples():
    r = 0.2
    pf, _ = fermi_data(r)
    assert chi_leq(-3, 0.0, pf, r, G) == pytest.approx(1.0)
    a0 = aperture(r, G)
    assert chi_leq(-3, 2 * G ** -2 * a0 * 1.0001, pf, r, G) == 0.0


def test_telescoping():
    rng = np.random.default_rng(1)
    k0 = rng.uniform(-0.3, 0.3, 50)
    k = rng.uniform(-1, 1, 50)
    total = sum(f_scale(j, k0, k, 0.0, G) for j in range(-60, 1))
    np.testing.assert_allclose(total + chi_leq(-61, k0, k, 0.0, G), chi_leq(0, k0, k, 0.0, G),
                               atol=1e-14)


@pytest.mark.parametrize("r", [2**-6, 2**-8, 2**-3, -0.2, 0.15, -0.45])
def test_crossover_matches_scan(r):
    assert crossover_scale(r, G) == brute_hstar(r, G)


def test_crossover_hand_values_and_shift():
    assert crossover_scale(2**-6, 2.0) == -4
    assert crossover_scale(0.0, 2.0) == -math.inf
    for r in (2**-5, 2**-7, 0.1, 0.03):
        assert abs(crossover_scale(r / 4, G) - (crossover_scale(r, G) - 2)) <= 1


def test_support_measure_scaling():
    vals = [support_measure(h, 0.0, G) / G ** (1.5 * h) for h in range(-2, -9, -1)]
    assert max(vals) / min(vals) < 1.5


def test_propagator_real_at_origin():
    v = single_scale_propagator(-4, 0.0, 0.0, 0.0, G)
    assert abs(v.imag) < 1e-15 * abs(v.real) + 1e-18


@pytest.mark.parametrize("deriv, dim", [((0, 0), 0.5), ((1, 0), 1.5), ((0, 1), 1.0)])
def test_regime1_envelope(deriv, dim):
    hs = range(-2, -9, -1)
    ratios = []
    for h in hs:
        g = regime1_grid(h, 0.0, G)
        w0, w1 = rms_widths(g)
        ratios.append(envelope(g, 2 * w0, 2 * w1, deriv) / G ** (h * dim))
    assert max(ratios) / min(ratios) < 2.0


def test_decay_anisotropy():
    hs = list(range(-2, -9, -1))
    w = [rms_widths(regime1_grid(h, 0.0, G)) for h in hs]
    assert scaling_exponent(hs, [a for a, _ in w], G) == pytest.approx(-1.0, abs=0.15)
    assert scaling_exponent(hs, [b for _, b in w], G) == pytest.approx(-0.5, abs=0.075)


def test_quadrature_refinement_and_refusal():
    single_scale_propagator(-3, np.array([0.0, 5.0]), np.array([0, 2]), 0.0, G, res=8,
                            check=True)
    with pytest.raises(QuadratureError):
        single_scale_propagator(-3, np.array([0.0, 5.0]), np.array([0, 2]), 0.0, G,
                                res=0.05, check=True)


def test_partition_of_unity():
    r = 2**-6
    pf, _ = fermi_data(r)
    hs = crossover_scale(r, G)
    a, b, c = (qp_cumulative_grid(hs, 1, r, G), qp_cumulative_grid(hs, -1, r, G),
               cumulative_grid(hs, r, G))
    rng = np.random.default_rng(7)
    x0 = rng.uniform(-60, 60, 20)
    x = rng.integers(-40, 40, 20).astype(float)
    lhs = np.exp(1j * pf * x) * a.evaluate(x0, x) + np.exp(-1j * pf * x) * b.evaluate(x0, x)
    assert np.abs(lhs - c.evaluate(x0, x)).max() < 1e-9


def test_regime2_envelope_and_decay():
    r = 2**-6
    _, vf = fermi_data(r)
    hs0 = crossover_scale(r, G)
    hs = list(range(hs0 - 1, hs0 - 7, -1))
    ratios, w1s = [], []
    for h in hs:
        g = regime2_grid(h, 1, r, G)
        w0, w1 = rms_widths(g)
        w1s.append(w1)
        ratios.append(envelope(g, 2 * w0, 2 * w1) / (G ** h / vf))
    assert max(ratios) / min(ratios) < 2.0
    assert scaling_exponent(hs, w1s, G) == pytest.approx(-1.0, abs=0.15)


def test_luttinger_remainder():
    r = 2**-6
    _, vf = fermi_data(r)
    hs0 = crossover_scale(r, G)
    t = np.linspace(-200, 200, 21)
    x = np.arange(-60, 61, 6, dtype=float)
    T, X = np.meshgrid(t, x, indexing="ij")
    hs = list(range(hs0 - 2, hs0 - 7, -1))
    rel = []
    for h in hs:
        lin, rem = luttinger_decompose(h, 1, T / G**h * G**hs0, X / G**h * G**hs0, r, G)
        rel.append(np.abs(rem).max() / np.abs(lin + rem).max())
    # relative suppression gamma^h / v_F^2: slope one in h
    assert scaling_exponent(hs, rel, G) == pytest.approx(1.0, abs=0.15)
    # linearised dispersion: remainder vanishes identically
    g = regime2_grid(hs0 - 3, 1, r, G, linear=True)
    lin = qp_propagator(hs0 - 3, 1, T, X, r, G, linear=True)
    np.testing.assert_array_equal(lin, g.evaluate(T, X))


def test_luttinger_parity():
    r = 2**-6
    h = crossover_scale(r, G) - 3
    t = np.array([0.0, 30.0, -70.0])
    x = np.array([0.0, 5.0, 11.0])
    gp = qp_propagator(h, 1, t, x, r, G, linear=True)
    gm = qp_propagator(h, -1, t, -x, r, G, linear=True)
    np.testing.assert_allclose(gp, gm, atol=1e-14)


def test_crossover_continuity():
    for r in (2**-4, 2**-6, 2**-8):
        hs = crossover_scale(r, G)
        _, vf = fermi_data(r)
        g1 = regime1_grid(hs, r, G)
        w0, w1 = rms_widths(g1)
        e1 = envelope(g1, 2 * w0, 2 * w1)
        g2 = regime2_grid(hs - 1, 1, r, G)
        w0, w1 = rms_widths(g2)
        # regime-2 envelope gamma^h / v_F carried from h* - 1 up to h*
        e2 = G * envelope(g2, 2 * w0, 2 * w1)
        assert G**-2 <= e1 / e2 <= G**2


def test_table_roundtrip(tmp_path):
    t = np.linspace(-20, 20, 5)
    x = np.arange(-2, 3, dtype=float)
    T, X = np.meshgrid(t, x, indexing="ij")
    tab = PropagatorTable.build(-3, 0.0, G, T, X)
    tab.write(tmp_path / "a.csv", tmp_path / "a.json")
    back = PropagatorTable.read(tmp_path / "a.csv", tmp_path / "a.json")
    np.testing.assert_array_equal(back.values, tab.values)
    np.testing.assert_array_equal(back.rebuild().values, tab.values)
