import importlib.util
import math
import os
import subprocess
import sys

import numpy as np
import pytest

from fermichain import _accel
from fermichain.model import _kahan_time_sum, _occupation_factor, dispersion, momentum_grid
from fermichain.scales import mode_sum

needs_numba = pytest.mark.skipif(not _accel.USE_NUMBA, reason="numba path disabled")


@needs_numba
def test_mode_sum_paths_agree():
    rng = np.random.default_rng(2)
    x0 = rng.uniform(-40, 40, 300)
    x = rng.integers(-10, 10, 300).astype(float)
    k0 = rng.uniform(-2, 2, 700)
    k = rng.uniform(-math.pi, math.pi, 700)
    w = rng.normal(size=700) + 1j * rng.normal(size=700)
    a = mode_sum(x0, x, k0, k, w, use_numba=True)
    b = mode_sum(x0, x, k0, k, w, use_numba=False)
    assert np.abs(a - b).max() < 1e-11


@needs_numba
def test_time_sum_paths_agree():
    ks = momentum_grid(64)
    eps = dispersion(ks, 0.3)
    for tau, x in ((0.2, 0.0), (3.0, 5.0), (9.7, 17.0)):
        ref = math.fsum(math.cos(q * x) * _occupation_factor(tau, e, 10.0)
                        for q, e in zip(ks, eps))
        assert _kahan_time_sum(tau, x, ks, eps, 10.0) == pytest.approx(ref, abs=1e-14)


def test_env_flag_selects_numpy_path():
    code = ("from fermichain import _accel; from fermichain.model import free_schwinger_time;"
            "print(_accel.USE_NUMBA, repr(free_schwinger_time(1.3, 2, 0.3, 8, 6.0)))")
    env = dict(os.environ, FERMICHAIN_DISABLE_NUMBA="1")
    off = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True,
                         text=True, check=True).stdout.split()
    env["FERMICHAIN_DISABLE_NUMBA"] = "0"
    on = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True,
                        text=True, check=True).stdout.split()
    assert off[0] == "False"
    assert on[0] == str(importlib.util.find_spec("numba") is not None)
    assert abs(float(off[1]) - float(on[1])) < 1e-14
