import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fermichain.model import (ModelParams, NoFermiPoint, dispersion, fermi_data,
                              free_propagator_momentum, free_schwinger_matsubara,
                              free_schwinger_time, matsubara_grid, momentum_grid,
                              potential_fourier, solve_interacting_pf)

NN = (0.0, 0.5)


@pytest.mark.parametrize("k, r", [(0.0, 0.0), (math.pi / 2, 1.0), (math.pi / 3, 0.5)])
def test_dispersion_zeros(k, r):
    assert abs(dispersion(k, r)) < 1e-15


def test_fermi_data_closed_forms():
    pf, vf = fermi_data(1.0)
    assert pf == pytest.approx(math.pi / 2) and vf == pytest.approx(1.0)
    pf, vf = fermi_data(0.5)
    assert pf == pytest.approx(math.pi / 3) and vf == pytest.approx(math.sqrt(3) / 2)


def test_fermi_data_small_r_series():
    r = 2.0**-6
    pf, vf = fermi_data(r)
    # arccos(1 - r) = sqrt(2r) (1 + r/12 + ...)
    assert pf / math.sqrt(r) == pytest.approx(math.sqrt(2) * (1 + r / 12), rel=r**2)
    assert vf == pytest.approx(math.sin(pf), rel=1e-14)


@pytest.mark.parametrize("r", [0.0, -0.1, 2.0])
def test_fermi_data_insulating(r):
    with pytest.raises(NoFermiPoint):
        fermi_data(r)


def test_potential_fourier_nn():
    assert potential_fourier(NN, 0.0) == pytest.approx(1.0)
    assert potential_fourier(NN, math.pi) == pytest.approx(-1.0)
    pf = np.linspace(0.01, 1.5, 50)
    diff = potential_fourier(NN, 0.0) - potential_fourier(NN, 2 * pf)
    np.testing.assert_allclose(diff, 2 * np.sin(pf) ** 2, atol=1e-14)


def test_propagator_examples_and_symmetry():
    beta = 16.0
    k0 = matsubara_grid(beta, 8)
    np.testing.assert_allclose(free_propagator_momentum(k0, math.pi / 2, 1.0), 1 / (-1j * k0), atol=1e-15)
    pf, _ = fermi_data(0.3)
    assert free_propagator_momentum(math.pi / beta, pf, 0.3) == pytest.approx(1 / (-1j * math.pi / beta))
    ks = momentum_grid(12)
    K0, K = np.meshgrid(k0, ks)
    s = free_propagator_momentum(K0, K, 0.2)
    np.testing.assert_allclose(s, free_propagator_momentum(K0, -K, 0.2))
    np.testing.assert_allclose(free_propagator_momentum(-K0, K, 0.2), np.conj(s))


@pytest.mark.parametrize("r", [-0.05, -0.1, -0.3])
def test_insulating_bound(r):
    k0 = matsubara_grid(40.0, 200)
    K0, K = np.meshgrid(k0, momentum_grid(32))
    assert np.abs(free_propagator_momentum(K0, K, r)).max() <= 1 / abs(r)


def test_time_vs_matsubara_example():
    a = free_schwinger_time(4.0, 0, 0.3, 8, 16.0)
    b = free_schwinger_matsubara(4.0, 0, 0.3, 8, 16.0)
    assert abs(a - b) < 1e-8


@settings(max_examples=40, deadline=None)
@given(x0=st.floats(-32.0, 32.0), x=st.integers(-8, 8), r=st.floats(-0.5, 1.5),
       L=st.integers(2, 16), beta=st.floats(1.0, 32.0))
def test_representation_equivalence(x0, x, r, L, beta):
    a = free_schwinger_time(x0, x, r, L, beta)
    b = free_schwinger_matsubara(x0, x, r, L, beta)
    assert abs(a - b) < 1e-8


def test_antiperiodicity_and_jump():
    L, beta, r = 8, 10.0, 1.0
    for tau in (0.3, 2.0, 7.5):
        assert free_schwinger_time(tau - beta, 2, r, L, beta) == pytest.approx(
            -free_schwinger_time(tau, 2, r, L, beta), abs=1e-14)
    jump = free_schwinger_time(1e-13, 0, r, L, beta) - free_schwinger_time(-1e-13, 0, r, L, beta)
    assert jump == pytest.approx(1.0, abs=1e-9)
    # symmetrised equal-time value is the midpoint
    mid = free_schwinger_time(0.0, 0, r, L, beta)
    assert mid == pytest.approx(0.5 * (free_schwinger_time(1e-13, 0, r, L, beta)
                                       + free_schwinger_time(-1e-13, 0, r, L, beta)), abs=1e-9)


def test_ground_state_equal_time_limit():
    # S(0^-, x) = -<a+_0 a_x> -> -sin(p_F x)/(pi x) for large L, beta
    pf = math.pi / 2
    L, beta = 400, 800.0
    for x in (1, 2, 3, 5):
        val = free_schwinger_time(-1e-12, x, 1.0, L, beta)
        assert val == pytest.approx(-math.sin(pf * x) / (math.pi * x), abs=5e-3)


def test_interacting_pf():
    assert solve_interacting_pf(0.0, 0.25, 0, 0, 0, 2.0, -3) == pytest.approx(math.acos(0.75), rel=1e-12)
    assert solve_interacting_pf(0.0, 0.25, 0.01, 0, 0, 2.0, -3) == pytest.approx(
        math.acos(0.76 / 1.01), rel=1e-12)
    with pytest.raises(NoFermiPoint):
        solve_interacting_pf(0.0, -0.1, 0, 0, 0, 2.0, -3)


def test_params_validation():
    with pytest.raises(ValueError):
        ModelParams(gamma=1.0)
    with pytest.raises(ValueError):
        ModelParams(L=0)
    with pytest.raises(ValueError):
        ModelParams(r=1.0).require_rg_range()
    assert ModelParams(r=0.1).h == pytest.approx(-0.9)
