"""Command-line front door: ``fermichain <subcommand> [options]``.

Subcommands write deterministic CSV tables and JSON summaries into the
output directory.  ``report`` runs the acceptance criteria and exits with
status 1 when any of them fails.  Exit status 2 flags an invalid
configuration, 3 a refusal raised by one of the modules.
"""
from __future__ import annotations

import argparse
import csv
import itertools
import json
import math
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, load_config, override
from .scales import SCHEMA_VERSION

# flag -> (section, key) for the per-subcommand overrides
OVERRIDES = {
    "free": {"--L": ("free", "L"), "--beta": ("free", "beta"), "--r": ("model", "r"),
             "--nt": ("free", "nt")},
    "propagator": {"--h": ("propagator", "h"), "--regime": ("propagator", "regime"),
                   "--omega": ("propagator", "omega"), "--r": ("model", "r"),
                   "--gamma": ("model", "gamma"), "--res": ("propagator", "res"),
                   "--npts": ("propagator", "npts")},
    "trees": {"--n": ("trees", "n"), "--h-root": ("trees", "h_root"),
              "--exhaustive-max": ("trees", "exhaustive_max"), "--gamma": ("model", "gamma")},
    "flow": {"--lambda": ("model", "lambda"), "--r": ("model", "r"),
             "--gamma": ("model", "gamma"), "--floor": ("flow", "floor"),
             "--depth-below": ("flow", "depth_below"), "--window": ("flow", "window"),
             "--size": ("flow", "size"), "--depth": ("flow", "depth"),
             "--bound": ("flow", "bound")},
    "ed": {"--L": ("ed", "L"), "--beta": ("ed", "beta"), "--lambda": ("model", "lambda"),
           "--r": ("model", "r"), "--nk0": ("ed", "nk0")},
    "crossover": {"--gamma": ("model", "gamma"), "--kmin": ("crossover", "kmin"),
                  "--kmax": ("crossover", "kmax")},
    "report": {},
}


def _csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x
                        for x in row])


def _plain(x):
    if isinstance(x, np.generic):
        return x.item()
    raise TypeError(f"cannot serialise {type(x).__name__}")


def _json(path, data):
    data = {"schema_version": SCHEMA_VERSION, **data}
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True, allow_nan=False, default=_plain)
        fh.write("\n")


# ---------------------------------------------------------------- subcommands

def run_free(cfg, out):
    """Time-domain against Matsubara ``S0`` on a ``(x0, x)`` grid."""
    from .model import free_schwinger_matsubara, free_schwinger_time
    L, beta, nt = cfg["free"]["L"], cfg["free"]["beta"], cfg["free"]["nt"]
    r = cfg["model"]["r"]
    x0s = beta * (np.arange(-nt // 2, nt - nt // 2) + 0.5) / (nt // 2 or 1)
    x0s = x0s[np.abs(x0s) < beta]
    rows, worst = [], 0.0
    for x0, x in itertools.product(x0s, range(L)):
        a = free_schwinger_time(x0, x, r, L, beta)
        b = free_schwinger_matsubara(x0, x, r, L, beta)
        worst = max(worst, abs(a - b))
        rows.append((float(x0), x, a, b, abs(a - b)))
    _csv(out / "free.csv", ["x0", "x", "time_domain", "matsubara", "abs_diff"], rows)
    ok = worst < 1e-8
    _json(out / "free.json", {"L": L, "beta": beta, "r": r, "max_abs_diff": worst, "pass": ok})
    print(f"free: max |time - matsubara| = {worst:.2e} over {len(rows)} points")
    return 0


def run_propagator(cfg, out):
    """Single-scale propagator table on a square window around the origin."""
    from .scales import PropagatorTable
    p = cfg["propagator"]
    r, gamma = cfg["model"]["r"], cfg["model"]["gamma"]
    n = p["npts"]
    half = gamma ** -p["h"]
    t = np.linspace(-4 * half, 4 * half, n)
    xs = np.arange(-(n // 2), n - n // 2, dtype=float) * max(1.0, round(math.sqrt(half)))
    T, X = np.meshgrid(t, xs, indexing="ij")
    omega = p["omega"] if p["regime"] == 2 else None
    tab = PropagatorTable.build(p["h"], r, gamma, T, X, p["regime"], omega, p["res"])
    tab.write(out / "propagator.csv", out / "propagator.json")
    print(f"propagator: h={p['h']} regime={p['regime']}, sup |g| = "
          f"{np.abs(tab.values).max():.4e}")
    return 0


def run_trees(cfg, out):
    """Identity and dimension checks on every labelled tree up to ``n`` endpoints."""
    from .trees import (all_assignments, bound_product, check_identities, enumerate_trees,
                        label_endpoints, random_assignment)
    t_cfg = cfg["trees"]
    gamma = cfg["model"]["gamma"]
    rng = np.random.default_rng(cfg.seed)
    rows = []
    for n in range(1, t_cfg["n"] + 1):
        for ti, base in enumerate(enumerate_trees(t_cfg["h_root"], n)):
            for sizes in itertools.product((2, 4), repeat=n):
                t = label_endpoints(base, sizes)
                if n <= t_cfg["exhaustive_max"]:
                    assignments = list(all_assignments(t))
                else:
                    assignments = [random_assignment(t, rng)]
                for ai, P in enumerate(assignments):
                    t.P = P
                    ok, _ = check_identities(t)
                    r1 = bound_product(t, 1, gamma)
                    cl = ["lam" if s == 4 else "nu" for s in sizes]
                    t2 = label_endpoints(t, list(sizes), cl)
                    t2.P = P
                    r2 = bound_product(t2, 2, gamma, v_f=0.1)
                    rows.append((n, ti, "-".join(map(str, sizes)), ai, int(ok),
                                 int(r1.collected_ok), int(r1.positivity_ok),
                                 int(r2.collected_ok), str(r1.raw_exponent)))
    _csv(out / "trees.csv", ["n", "tree", "sizes", "assignment", "identities",
                             "collected_r1", "dimensions_r1", "vf_telescoping_r2",
                             "exponent_r1"], rows)
    fails = sum(1 for r in rows if not all(r[4:8]))
    _json(out / "trees.json", {"h_root": t_cfg["h_root"], "n": t_cfg["n"], "seed": cfg.seed,
                               "checked": len(rows), "failures": fails, "pass": fails == 0})
    print(f"trees: {len(rows)} checks, {fails} failures")
    return 0 if fails == 0 else 1


def run_flow(cfg, out):
    """Coupling flow; both regimes for ``r > 0``, regime 1 for ``r <= 0``."""
    from .flow import flow_regime1, flow_regime2
    m, f = cfg["model"], cfg["flow"]
    lam, r, gamma, v = m["lambda"], m["r"], m["gamma"], m["v"]
    if abs(r) > 0.5:
        raise ValueError(f"the flow needs |r| <= 1/2, got r={r}")
    if r > 0:
        traj = flow_regime2(lam, r, gamma, v, f["depth_below"], f["window"], f["bound"],
                            depth=f["depth"], size=f["size"], floor=f["floor"])
        traj.write(out / "flow.csv", out / "flow.json")
        print(f"flow: h*={traj.hstar}, eta={traj.eta:.6e}, "
              f"nu_h*={traj.shooting.get('nu_hstar', 0.0):.3e}")
    else:
        f1 = flow_regime1(lam, r, gamma, v, f["floor"])
        f1.write(out / "flow.csv", out / "flow.json")
        a = f1.last
        print(f"flow: regime 1 to h={f1.h_end}, (z, alpha, mu) = "
              f"({a[0]:.3e}, {a[1]:.3e}, {a[2]:.3e})")
    return 0


def run_ed(cfg, out):
    """ED momentum-space two-point function on the Matsubara grid."""
    from .ed import diagonalize, schwinger_momentum
    from .model import matsubara_grid
    e = cfg["ed"]
    lam, r, v = cfg["model"]["lambda"], cfg["model"]["r"], cfg["model"]["v"]
    sp = diagonalize(e["L"], lam, r, beta=e["beta"] or None, v=v)
    k0 = matsubara_grid(sp.beta, e["nk0"])
    rows = []
    for m_ in range(e["L"]):
        k = 2 * math.pi * m_ / e["L"]
        vals = np.atleast_1d(schwinger_momentum(k0, k, sp))
        rows += [(float(a), m_, float(s.real), float(s.imag)) for a, s in zip(k0, vals)]
    _csv(out / "ed.csv", ["k0", "m", "re", "im"], rows)
    _json(out / "ed.json", {"L": e["L"], "beta": sp.beta, "lambda": lam, "r": r,
                            "ground_energy": sp.e0, "log_z": sp.log_z,
                            "max_abs_S": max(math.hypot(a, b) for *_, a, b in rows)})
    print(f"ed: L={e['L']}, beta={sp.beta}, E0={sp.e0:.10f}")
    return 0


def run_crossover(cfg, out):
    """``h*``, Fermi data and regime-matching ratios over ``r = 2^-k``."""
    from .model import fermi_data
    from .scales import crossover_scale
    from .trees import crossover_consistency
    gamma = cfg["model"]["gamma"]
    c = cfg["crossover"]
    rows = []
    for k in range(c["kmin"], c["kmax"] + 1):
        r = 2.0 ** -k
        p_f, v_f = fermi_data(r)
        rows.append((r, crossover_scale(r, gamma), p_f, v_f,
                     *(crossover_consistency(l, r, gamma) for l in (2, 4, 6))))
    _csv(out / "crossover.csv", ["r", "hstar", "p_F", "v_F", "ratio_l2", "ratio_l4",
                                 "ratio_l6"], rows)
    ratios = [x for row in rows for x in row[4:]]
    ok = all(gamma ** -2 <= x <= gamma ** 2 for x in ratios)
    _json(out / "crossover.json", {"gamma": gamma, "min_ratio": min(ratios),
                                   "max_ratio": max(ratios), "pass": ok})
    print(f"crossover: ratios in [{min(ratios):.3f}, {max(ratios):.3f}]")
    return 0


def run_report(cfg, out, only=None):
    """All acceptance criteria; nonzero exit iff any fails."""
    from .acceptance import run_all
    results = run_all(cfg.seed, only, echo=print)
    _csv(out / "report.csv", ["criterion", "title", "pass", "measured", "target"],
         [(c.number, c.title, int(c.passed), c.measured, c.target) for c in results])
    _json(out / "report.json", {"seed": cfg.seed, "criteria": [
        {k: v for k, v in c.to_dict().items() if k != "seconds"} for c in results]})
    failed = [c.number for c in results if not c.passed]
    print(f"report: {len(results) - len(failed)}/{len(results)} criteria pass")
    return 1 if failed else 0


COMMANDS = {"free": run_free, "propagator": run_propagator, "trees": run_trees,
            "flow": run_flow, "ed": run_ed, "crossover": run_crossover, "report": run_report}


def build_parser():
    parser = argparse.ArgumentParser(prog="fermichain", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__.splitlines()[0])
        p.add_argument("--config", metavar="PATH", help="configuration file")
        p.add_argument("--out", metavar="DIR", help="output directory")
        p.add_argument("--seed", metavar="N", help="seed for every random choice")
        for flag in OVERRIDES[name]:
            p.add_argument(flag, metavar="X")
        if name == "report":
            p.add_argument("--only", metavar="LIST", help="comma-separated criterion numbers")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        override(cfg, "run", "out", args.out, "--out")
        override(cfg, "run", "seed", args.seed, "--seed")
        for flag, (section, key) in OVERRIDES[args.command].items():
            override(cfg, section, key, getattr(args, flag[2:].replace("-", "_")), flag)
        only = None
        if getattr(args, "only", None):
            try:
                only = {int(x) for x in args.only.split(",")}
            except ValueError:
                raise ConfigError(f"--only: {args.only!r} is not a list of integers") from None
    except (ConfigError, OSError) as exc:
        print(f"fermichain {args.command}: config error: {exc}", file=sys.stderr)
        return 2
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        if args.command == "report":
            return run_report(cfg, out, only)
        return COMMANDS[args.command](cfg, out)
    except (ValueError, RuntimeError) as exc:
        print(f"fermichain {args.command}: refused: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
