"""Timing comparison of the jitted stencil kernels against the numpy fallback.

Runs the hot kernels (stencil application and Gaussian smoothing) under the
active backend of this process. To compare, run twice:

    python benchmarks/bench_kernels.py
    AP_NO_NUMBA=1 python benchmarks/bench_kernels.py

or pass --both to spawn the fallback run in a subprocess and print a
side-by-side table.
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np

from apsing import Domain, build_laplacian
from apsing import kernels


def bench(fn, *args, repeat=200):
    fn(*args)                      # warm-up (jit compile)
    t0 = time.perf_counter()
    for _ in range(repeat):
        fn(*args)
    return (time.perf_counter() - t0) / repeat


def run_suite():
    rng = np.random.default_rng(0)
    rows = {}

    dom1 = Domain("interval", (0.0, 1.0), "dirichlet", 1999)
    L1 = build_laplacian(dom1)
    u1 = rng.standard_normal(dom1.num_nodes)
    rows["stencil 1d n=1999"] = bench(L1.apply, u1)

    dom2 = Domain("rectangle", (0.0, 1.0, 0.0, 1.0), "dirichlet", 128)
    L2 = build_laplacian(dom2)
    u2 = rng.standard_normal(dom2.num_nodes)
    rows["stencil 2d 128x128"] = bench(L2.apply, u2)

    k = kernels.gaussian_kernel(0.01, 1.0 / 2000)
    rows["smooth 1d n=1999"] = bench(kernels.smooth_1d, u1, k, "neumann")

    kx = kernels.gaussian_kernel(0.02, 1.0 / 129)
    rows["smooth 2d 128x128"] = bench(
        kernels.smooth_2d, u2, 128, 128, kx, kx, "neumann", repeat=20)

    rows["sparse matvec 1d (reference)"] = bench(L1.matrix.dot, u1)
    return rows


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--both", action="store_true",
                        help="also run the numpy fallback and print a table")
    parser.add_argument("--json", action="store_true", help="emit raw JSON")
    args = parser.parse_args()

    rows = run_suite()
    if args.json:
        print(json.dumps({"backend": kernels.BACKEND, "seconds": rows}))
        return

    if not args.both:
        print(f"backend: {kernels.BACKEND}")
        for name, sec in rows.items():
            print(f"  {name:32s} {sec * 1e6:10.1f} us")
        return

    env = dict(os.environ, AP_NO_NUMBA="1")
    out = subprocess.run(
        [sys.executable, __file__, "--json"], env=env,
        capture_output=True, text=True, check=True,
    )
    other = json.loads(out.stdout)
    print(f"{'kernel':32s} {kernels.BACKEND:>12s} {other['backend']:>12s} {'speedup':>9s}")
    for name, sec in rows.items():
        o = other["seconds"][name]
        print(f"{name:32s} {sec * 1e6:10.1f} us {o * 1e6:10.1f} us {o / sec:8.2f}x")


if __name__ == "__main__":
    main()
