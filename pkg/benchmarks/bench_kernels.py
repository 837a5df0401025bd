"""Time the coordinate-descent Lasso with the compiled and pure-Python kernels.

Usage: python benchmarks/bench_kernels.py [--repeat 3] [--lam-scale 0.2] [--sizes 200x50 1000x200]
"""

import argparse
import time

import numpy as np

from hdte._backend import get_kernel
from hdte.lasso import penalty_level, solve_weighted_l1


def problem(n, p, lam_scale, seed=0):
    r = np.random.default_rng(seed)
    F = np.asfortranarray(r.standard_normal((n, p)))
    beta = np.zeros(p)
    beta[:5] = 1.0
    y = F @ beta + r.standard_normal(n)
    thresh = lam_scale * penalty_level(n, p) / n * np.sqrt(np.mean(F ** 2 * (y - y.mean())[:, None] ** 2, axis=0))
    return F, y, np.ascontiguousarray(thresh)


def time_kernel(kernel, F, y, thresh, repeat):
    n = F.shape[0]
    w = np.ones(n)
    best = np.inf
    for _ in range(repeat):
        beta = np.zeros(F.shape[1])
        r = np.ascontiguousarray(y.copy())
        t0 = time.perf_counter()
        sweeps, kkt = solve_weighted_l1(F, w, r, beta, thresh, kkt_tol=1e-7, kernel=kernel)
        best = min(best, time.perf_counter() - t0)
    return best, sweeps, beta


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--lam-scale", type=float, default=0.2,
                    help="multiple of the default penalty level (smaller = denser fits)")
    ap.add_argument("--sizes", nargs="+", default=["100x40", "400x200", "2000x500"])
    args = ap.parse_args()
    try:
        compiled = get_kernel("cython")
    except ImportError:
        compiled = None
        print("compiled kernel not built; timing the Python kernel only")
    print(f"{'n x p':>10} {'sweeps':>7} {'python [s]':>11} {'cython [s]':>11} {'speedup':>8}")
    for size in args.sizes:
        n, p = (int(v) for v in size.split("x"))
        F, y, thresh = problem(n, p, args.lam_scale)
        t_py, sweeps, b_py = time_kernel(get_kernel("python"), F, y, thresh, args.repeat)
        if compiled is None:
            print(f"{size:>10} {sweeps:>7d} {t_py:>11.4f} {'-':>11} {'-':>8}")
            continue
        t_c, _, b_c = time_kernel(compiled, F, y, thresh, args.repeat)
        if not np.allclose(b_py, b_c, atol=1e-8):
            raise SystemExit(f"kernels disagree on {size}")
        print(f"{size:>10} {sweeps:>7d} {t_py:>11.4f} {t_c:>11.4f} {t_py / t_c:>7.1f}x")


if __name__ == "__main__":
    main()
