"""Compiled vs pure-NumPy kernel timings on the bundled IEEE-33 workload.

Usage: python3 benchmarks/bench_kernels.py [--repeats N] [--out results.csv]
"""

import argparse
import csv
import sys
import timeit

import numpy as np

from shs_sentinel import kernels
from shs_sentinel.experiments import build_setup
from shs_sentinel.identifier import precompute_bank
from shs_sentinel.simulator import SimConfig, generate_switching_sequence, make_probe, run_sequence


def workloads(setup, cfg):
    cache = setup.cache(cfg.t_s)
    bank = precompute_bank(setup.catalog, setup.gains, cfg, cache=cache)
    dm = cache[1]
    w = np.hstack([make_probe(cfg.probe, cfg.tau, cfg.t_s, dm.p),
                   np.zeros((cfg.n_interval, dm.r))])
    z0 = np.zeros(dm.nz)
    seq = generate_switching_sequence(setup.catalog, 1, 3)
    yc = run_sequence(setup.catalog, setup.gains, seq, cfg, cache)[0].window.yc
    x0 = yc[0, bank.r:].copy()
    y = yc.ravel().copy()
    everything = np.arange(bank.m)
    physical = bank.positions_of(1)
    pts = np.random.default_rng(0).standard_normal((768, 10))
    q = np.zeros(10)
    return {
        "simulate_lti (500 steps)": lambda k: k.simulate_lti(dm.Ad, dm.Bd, dm.C, dm.D, z0, w),
        "propagate (500 steps)": lambda k: k.propagate(dm.Ad, dm.Bd, z0, w),
        "residual_scan (93 scenarios)":
            lambda k: k.residual_scan(bank.forced, bank.free, x0, y, everything, y.size),
        "residual_scan (28 scenarios)":
            lambda k: k.residual_scan(bank.forced, bank.free, x0, y, physical, y.size),
        "sq_distances (768 points)": lambda k: k.sq_distances(pts, q),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=7)
    ap.add_argument("--number", type=int, default=50)
    ap.add_argument("--out")
    args = ap.parse_args(argv)

    backends = kernels.available_backends()
    if "cython" not in backends:
        print("compiled extension not built; run `python3 setup.py build_ext --inplace`",
              file=sys.stderr)
    cfg = SimConfig(noise_db=-100.0)
    jobs = workloads(build_setup(), cfg)
    rows = []
    for name, job in jobs.items():
        best = {}
        for bname, impl in backends.items():
            t = timeit.repeat(lambda: job(impl), number=args.number, repeat=args.repeats)
            best[bname] = min(t) / args.number * 1e6
        speedup = best["python"] / best["cython"] if "cython" in best else float("nan")
        rows.append([name, f"{best['python']:.2f}", f"{best.get('cython', float('nan')):.2f}",
                     f"{speedup:.2f}"])

    header = ["kernel", "python_us", "cython_us", "speedup"]
    width = max(len(r[0]) for r in rows) + 2
    print(f"{header[0]:<{width}}{header[1]:>12}{header[2]:>12}{header[3]:>10}")
    for r in rows:
        print(f"{r[0]:<{width}}{r[1]:>12}{r[2]:>12}{r[3]:>10}")
    if args.out:
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)


if __name__ == "__main__":
    main()
