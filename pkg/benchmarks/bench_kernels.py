"""Time the compiled and pure-Python kernel backends on NSBM-sized inputs.

Usage: python benchmarks/bench_kernels.py [--n 100 200] [--Q 2 3] [--repeat 5]
"""
import argparse
import timeit

import numpy as np

from noisysbm import kernels
from noisysbm.model import edge_pairs


def instance(n, Q, seed=0):
    rng = np.random.default_rng(seed)
    rows, cols = edge_pairs(n)
    m = rows.size
    return dict(rows=rows, cols=cols, tau=rng.dirichlet(np.ones(Q), size=n),
                d=rng.normal(0, 0.05, (m, Q, Q)), rho=rng.random((m, Q, Q)),
                x=rng.normal(1, 2, m), log_pi=np.log(np.full(Q, 1.0 / Q)))


def cases(inst, backend):
    r, c, tau = inst["rows"], inst["cols"], inst["tau"]
    return {
        "pair_moments": lambda: kernels.pair_moments(inst["x"], inst["rho"], r, c, tau, backend=backend),
        "pair_contract": lambda: kernels.pair_contract(inst["d"], r, c, tau, backend=backend),
        "ve_fixed_point(20 sweeps)": lambda: kernels.ve_fixed_point(
            inst["d"], r, c, inst["log_pi"], tau, 20, 0.0, 0.5, 1e-10, backend=backend),
    }


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--n", type=int, nargs="+", default=[100, 200])
    parser.add_argument("--Q", type=int, nargs="+", default=[2, 3])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)

    backends = sorted(kernels.BACKENDS)
    print(f"backends: {', '.join(backends)} (default: {kernels.BACKEND})")
    print(f"{'kernel':<26}{'n':>5}{'Q':>3}" + "".join(f"{b + ' ms':>14}" for b in backends) + f"{'speedup':>10}")
    for n in args.n:
        for Q in args.Q:
            inst = instance(n, Q)
            timings = {b: {} for b in backends}
            for b in backends:
                for name, fn in cases(inst, b).items():
                    timings[b][name] = min(timeit.repeat(fn, number=1, repeat=args.repeat)) * 1e3
            for name in timings[backends[0]]:
                row = "".join(f"{timings[b][name]:>14.2f}" for b in backends)
                speed = (f"{timings['python'][name] / timings['cython'][name]:>9.1f}x"
                         if {"python", "cython"} <= set(backends) else "")
                print(f"{name:<26}{n:>5}{Q:>3}{row}{speed}")


if __name__ == "__main__":
    main()
