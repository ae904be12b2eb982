#!/usr/bin/env python3
"""Benchmark the compiled Jacobi SVD kernel against the pure-numpy fallback.

Both implementations run the identical cyclic one-sided Jacobi sweep;
this script times them head to head on a grid of matrix sizes and
checks they agree bit-for-bit on sweep counts and to tight tolerance
on singular values.
"""

import argparse
import time

import numpy as np

from lorita import _svd_fallback
from lorita.linalg import MAX_SWEEPS, SWEEP_TOL

try:
    from lorita import _svd_kernel
except ImportError:
    _svd_kernel = None


def run(kernel, a):
    b = np.ascontiguousarray(a / np.linalg.norm(a))
    v = np.eye(b.shape[1])
    t0 = time.perf_counter()
    sweeps, converged, resid = kernel.jacobi_sweeps(b, v, SWEEP_TOL, MAX_SWEEPS)
    elapsed = time.perf_counter() - t0
    s = np.sort(np.linalg.norm(b, axis=0))[::-1]
    return elapsed, sweeps, s


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--sizes", default="32,64,128,200")
    parser.add_argument("--repeats", type=int, default=3)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    if _svd_kernel is None:
        parser.error("compiled kernel not available; build the extension first")

    rng = np.random.default_rng(args.seed)
    print(f"{'size':>10} {'cython (s)':>12} {'numpy (s)':>12} {'speedup':>8} {'sweeps':>7}")
    for size in (int(t) for t in args.sizes.split(",")):
        a = rng.standard_normal((size, size))
        tc = tn = 0.0
        for _ in range(args.repeats):
            e, sweeps_c, s_c = run(_svd_kernel, a)
            tc += e
            e, sweeps_f, s_f = run(_svd_fallback, a)
            tn += e
        assert sweeps_c == sweeps_f, "sweep counts diverged"
        assert np.allclose(s_c, s_f, rtol=1e-12, atol=1e-14), "spectra diverged"
        tc /= args.repeats
        tn /= args.repeats
        print(f"{size:>7}x{size:<3} {tc:>12.4f} {tn:>12.4f} {tn / tc:>7.1f}x {sweeps_c:>7}")


if __name__ == "__main__":
    main()
