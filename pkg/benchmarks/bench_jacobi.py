"""Time the pure-numpy and compiled Jacobi eigensolvers on random SPD matrices.

Usage: python3 benchmarks/bench_jacobi.py [--sizes 10 50 150] [--repeat 3]
"""

import argparse
import time

import numpy as np

from ghom import kernels


def spd(n, rng):
    A = rng.standard_normal((n, n))
    return A @ A.T + n * np.eye(n)


def best_of(fn, A, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        w, V, _ = fn(A)
        best = min(best, time.perf_counter() - t0)
    return best, w, V


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sizes", type=int, nargs="+", default=[10, 50, 150])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    have_ext = kernels.compiled_jacobi_eigh is not None
    print(f"active backend: {kernels.BACKEND}")
    print(f"{'n':>5s} {'python [s]':>12s} {'cython [s]':>12s} {'speedup':>8s} {'max |dw|':>10s}")
    for n in args.sizes:
        A = spd(n, rng)
        tp, wp, _ = best_of(kernels.python_jacobi_eigh, A, args.repeat)
        if have_ext:
            tc, wc, _ = best_of(kernels.compiled_jacobi_eigh, A, args.repeat)
            dw = np.max(np.abs(np.sort(wp) - np.sort(wc)))
            print(f"{n:5d} {tp:12.4g} {tc:12.4g} {tp / tc:8.1f} {dw:10.2e}")
        else:
            print(f"{n:5d} {tp:12.4g} {'n/a':>12s} {'n/a':>8s} {'n/a':>10s}")


if __name__ == "__main__":
    main()
