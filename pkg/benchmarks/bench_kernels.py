"""Time the numba kernels against the pure-numpy fallback.

Usage::

    python3 benchmarks/bench_kernels.py [--n 8760] [--grid 100] [--repeat 5]

Each kernel is run once per backend to warm up (numba compiles on first
call), then timed ``--repeat`` times; the best time is reported.  The two
backends must agree to 1e-9 relative, otherwise the script exits 1.
"""

import argparse
import sys
import time

import numpy as np

from condcov._accel import get_backend, numba_available


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(n, grid, seed=0):
    rng = np.random.default_rng(seed)
    z = np.sort(rng.uniform(-5, 25, n))
    X = rng.standard_normal((n, 2))
    w = np.ones(n)
    pts = np.linspace(-5, 25, grid)
    h = 1.5
    counts = rng.integers(0, 3, n).astype(np.float64)
    starts = np.sort(rng.integers(0, n - 24, n // 24))
    stops = starts + 24

    def make(k):
        K = k.kernel_matrix(pts, z, h, 0)
        C = k.prefix_local_moments(K, z, pts, X)
        return {
            "kernel_matrix": lambda: k.kernel_matrix(pts, z, h, 0),
            "local_sums": lambda: k.local_sums(pts, z, w, X, h, 0),
            "outer_sums (cached K)": lambda: k.outer_sums(pts, z, counts, X, h, 0, K),
            "prefix_local_moments": lambda: k.prefix_local_moments(K, z, pts, X),
            "range_sums": lambda: k.range_sums(C, starts, stops),
            "ar1_filter": lambda: k.ar1_filter(X[:, 0], 0.8, 0.1),
        }

    return make


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=8760)
    ap.add_argument("--grid", type=int, default=100)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if not numba_available():
        print("numba is not installed; nothing to compare")
        return 0
    make = cases(args.n, args.grid)
    fast, ref = make(get_backend("numba")), make(get_backend("numpy"))
    print(f"n={args.n} G={args.grid} repeat={args.repeat}")
    print(f"{'kernel':24s} {'numba ms':>10s} {'numpy ms':>10s} {'speedup':>8s}")
    ok = True
    for name in fast:
        a, b = fast[name](), ref[name]()
        a = a if isinstance(a, tuple) else (a,)
        b = b if isinstance(b, tuple) else (b,)
        for x, y in zip(a, b):
            scale = max(np.abs(y).max(), 1e-300)
            if np.abs(x - y).max() > 1e-9 * scale:
                print(f"MISMATCH in {name}")
                ok = False
        tf, tr = best_of(fast[name], args.repeat), best_of(ref[name], args.repeat)
        print(f"{name:24s} {tf * 1e3:10.3f} {tr * 1e3:10.3f} {tr / tf:8.1f}x")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
