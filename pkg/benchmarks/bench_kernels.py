"""Numba kernels against their pure-numpy twins.

Run ``python benchmarks/bench_kernels.py [--batch N] [--repeat R]``.  Both
paths are called directly, so the ``NORMSHIFT_NUMBA`` flag does not matter
here.  The first numba call (compilation) is excluded from timings.
"""

import argparse
import time

import numpy as np

from normshift import _accel, kernels
from normshift.geometry import conformal
from normshift.pair import GeneratingPair


def best_of(fn, args, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(batch, rng):
    chart = conformal(3, "x1 + 0.3*sin(x2*x3)", -1.0, 1.0)
    pair = GeneratingPair("1 + w^2", "v^2 + x2*v + exp(-x1)*v", chart, (1.0, 2.0))
    X = rng.uniform(-0.9, 0.9, size=(batch, 3))
    Q = np.column_stack([X, rng.uniform(1.0, 2.0, batch)])
    vel = rng.normal(size=(batch, 3))
    g, dg = chart.metric_jet(X)
    ginv = np.linalg.inv(g)
    gamma = kernels.christoffel_numpy(ginv, dg)
    W, grad, wv = pair.jet(X, Q[:, 3])
    h = 1.0 + W ** 2
    tangents = rng.normal(size=(batch, 2, 3))
    tape = pair._tape
    return [
        ("tape_jet", kernels.tape_jet_numba, kernels.tape_jet_numpy, (tape, Q)),
        ("christoffel", kernels.christoffel_numba, kernels.christoffel_numpy, (ginv, dg)),
        ("connection_term", kernels.connection_term_numba, kernels.connection_term_numpy,
         (gamma, vel)),
        ("pair_force", kernels.pair_force_numba, kernels.pair_force_numpy,
         (g, vel, grad, wv, h)),
        ("orthogonality", kernels.orthogonality_numba, kernels.orthogonality_numpy,
         (g, vel, tangents)),
    ]


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--batch", type=int, default=100_000)
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    if not _accel.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")
    rng = np.random.default_rng(args.seed)
    print(f"batch={args.batch} repeat={args.repeat} (best of)")
    print(f"{'kernel':<16}{'numba ms':>12}{'numpy ms':>12}{'speedup':>10}{'max diff':>12}")
    for name, fast, slow, fargs in cases(args.batch, rng):
        a = fast(*fargs)
        b = slow(*fargs)
        a = a if isinstance(a, tuple) else (a,)
        b = b if isinstance(b, tuple) else (b,)
        diff = max(float(np.max(np.abs(x - y))) for x, y in zip(a, b))
        tf = best_of(fast, fargs, args.repeat)
        ts = best_of(slow, fargs, args.repeat)
        print(f"{name:<16}{tf * 1e3:>12.3f}{ts * 1e3:>12.3f}{ts / tf:>10.2f}{diff:>12.2e}")


if __name__ == "__main__":
    main()
