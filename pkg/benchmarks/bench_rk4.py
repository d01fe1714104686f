"""Time the compiled RK4 kernel against the numpy fallback on the same lowered fields.

    python3 benchmarks/bench_rk4.py [--points 4,200] [--steps 2000] [--repeat 3]
"""
import argparse
import time

import numpy as np

from flowcap import _backend
from flowcap.fields import Conjugated, Named, Sum, relu_field, softplus, Separable


def cases():
    rng = np.random.default_rng(0)
    yield "relu d=2", relu_field(2)
    yield "permute_relu d=2", Named("permute_relu")
    yield "sinsum conj d=2", Conjugated(np.diag([1.5, -0.7]), np.diag([0.8, 1.2]), [0.1, 0.2], Named("sinsum"))
    A = rng.normal(size=(4, 4)) / 2
    yield "softplus mix d=4", Sum([(1.0, Conjugated(A, A.T, rng.normal(size=4), Separable(softplus(3.0), dim=4))),
                                   (0.5, relu_field(4))])


def run(kernel, low, X, dt, n):
    return kernel(X, low.A, low.c, low.S, low.W, low.B, low.codes, low.params, low.trace_weights,
                  dt, n, 1e6, True)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--points", default="4,200", help="comma-separated batch sizes")
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    try:
        compiled = _backend.kernels("compiled")
    except ImportError:
        print("compiled kernel not built; run `pip install -e . --no-build-isolation`")
        return
    python = _backend.kernels("python")
    print(f"{'case':22s} {'points':>6s} {'compiled s':>11s} {'numpy s':>9s} {'speedup':>8s} {'max diff':>10s}")
    for (name, f), m in ((c, int(m)) for c in cases() for m in args.points.split(",")):
        low = f.lower()
        X = np.random.default_rng(1).uniform(-1, 1, (m, f.dim))
        dt = 1.0 / args.steps
        times = {}
        outs = {}
        for label, k in (("compiled", compiled), ("python", python)):
            best = np.inf
            for _ in range(args.repeat):
                t0 = time.perf_counter()
                outs[label] = run(k, low, X, dt, args.steps)
                best = min(best, time.perf_counter() - t0)
            times[label] = best
        diff = float(np.max(np.abs(outs["compiled"][0] - outs["python"][0])))
        print(f"{name:22s} {m:6d} {times['compiled']:11.4f} {times['python']:9.4f} "
              f"{times['python'] / times['compiled']:8.1f} {diff:10.2e}")


if __name__ == "__main__":
    main()
