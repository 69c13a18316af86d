"""Compare the numba and numpy paths of the hot kernels.

    python benchmarks/bench_kernels.py [--points N] [--modes M] [--repeat R]

The mode sum is the inner loop of every real-space propagator evaluation;
the time sum is the free Schwinger function at fixed ``(tau, x)``.  Both
paths are timed in one process and their outputs compared.
"""
import argparse
import math
import time

import numpy as np

from fermichain import _accel
from fermichain.model import _kahan_time_sum, dispersion, momentum_grid, _occupation_factor
from fermichain.scales import mode_sum


def best_of(fn, repeat):
    best = math.inf
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--points", type=int, default=2000)
    ap.add_argument("--modes", type=int, default=4000)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    if not _accel.USE_NUMBA:
        print("numba disabled or missing: only the numpy path is timed")
    rng = np.random.default_rng(args.seed)
    x0 = rng.uniform(-50, 50, args.points)
    x = rng.integers(-20, 20, args.points).astype(float)
    k0 = rng.uniform(-3, 3, args.modes)
    k = rng.uniform(-math.pi, math.pi, args.modes)
    w = rng.normal(size=args.modes) + 1j * rng.normal(size=args.modes)

    rows = []
    ref = mode_sum(x0, x, k0, k, w, use_numba=False)
    t_np = best_of(lambda: mode_sum(x0, x, k0, k, w, use_numba=False), args.repeat)
    if _accel.USE_NUMBA:
        mode_sum(x0[:2], x[:2], k0, k, w, use_numba=True)  # compile
        got = mode_sum(x0, x, k0, k, w, use_numba=True)
        t_nb = best_of(lambda: mode_sum(x0, x, k0, k, w, use_numba=True), args.repeat)
        rows.append(("mode_sum", t_np, t_nb, float(np.abs(got - ref).max())))
    else:
        rows.append(("mode_sum", t_np, math.nan, math.nan))

    L, beta, r = 4096, 50.0, 0.3
    ks = momentum_grid(L)
    eps = dispersion(ks, r)
    taus = rng.uniform(0.1, beta - 0.1, 200)
    xs = rng.integers(0, L, 200).astype(float)

    def fsum_path():
        return [math.fsum(math.cos(q * b) * _occupation_factor(a, e, beta)
                          for q, e in zip(ks, eps)) for a, b in zip(taus, xs)]

    ref_t = np.array(fsum_path())
    t_np = best_of(fsum_path, max(1, args.repeat // 2))
    if _accel.USE_NUMBA:
        _kahan_time_sum(taus[0], xs[0], ks, eps, beta)
        kahan = lambda: [_kahan_time_sum(a, b, ks, eps, beta) for a, b in zip(taus, xs)]
        got = np.array(kahan())
        t_nb = best_of(kahan, args.repeat)
        rows.append(("time_sum", t_np, t_nb, float(np.abs(got - ref_t).max())))
    else:
        rows.append(("time_sum", t_np, math.nan, math.nan))

    print(f"{'kernel':10s} {'numpy [s]':>11s} {'numba [s]':>11s} {'speed-up':>9s} {'max diff':>10s}")
    for name, a, b, d in rows:
        print(f"{name:10s} {a:11.4f} {b:11.4f} {a / b:9.1f} {d:10.1e}")


if __name__ == "__main__":
    main()
