"""Time the compiled kernels against the numpy fallback.

Run with ``python benchmarks/bench_kernels.py [--threads N]``.
"""
import argparse
import time

import numpy as np

from mflpaths import kernels
from mflpaths.bridge import sinkhorn_balanced


def best_of(fn, repeat=5):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(n, d, rng):
    X = rng.standard_normal((n, d))
    Y = rng.standard_normal((n, d)) + 0.5
    C = 0.5 * kernels.sqdist(X, Y)
    f = rng.standard_normal(n)
    logw = np.full(n, -np.log(n))
    w = np.full(n, 1.0 / n)
    return {
        "sqdist": lambda: kernels.sqdist(X, Y),
        "lse_rows": lambda: kernels.lse_rows(C, f, logw, 0.25),
        "softmin_grad": lambda: kernels.softmin_grad(X, Y, C, f, logw, 0.25),
        "pair_dist_sum": lambda: kernels.pair_dist_sum(X, w, Y, w),
        "sinkhorn": lambda: sinkhorn_balanced(X, Y, tau=0.05, tol=1e-8),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sizes", type=int, nargs="+", default=[100, 500, 2000])
    ap.add_argument("--dim", type=int, default=10)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    try:
        kernels.use_backend("cython")
    except ImportError:
        print("compiled kernels are not built; only the numpy fallback can be timed")
        return 1
    kernels.set_num_threads(args.threads)
    print(f"{'kernel':<14}{'n':>6}{'python [ms]':>14}{'cython [ms]':>14}{'speedup':>10}")
    for n in args.sizes:
        timings = {}
        for backend in ("python", "cython"):
            kernels.use_backend(backend)
            for name, fn in cases(n, args.dim, np.random.default_rng(n)).items():
                timings.setdefault(name, {})[backend] = best_of(fn, args.repeat)
        for name, t in timings.items():
            print(f"{name:<14}{n:>6}{1e3 * t['python']:>14.3f}{1e3 * t['cython']:>14.3f}"
                  f"{t['python'] / t['cython']:>10.1f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
