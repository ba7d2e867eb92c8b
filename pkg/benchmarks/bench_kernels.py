"""Time the 1-D forward marching kernels under both backends.

Usage::

    python3 benchmarks/bench_kernels.py [--sizes 41,161,641] [--repeat 5]

Prints one line per (kernel, size, backend) with the best wall time over
``--repeat`` calls and the max abs difference between the two backends.
The numba timings exclude compilation (one warm-up call first).
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from mfgcauchy._kernels import HAVE_NUMBA, bellman_march_1d, fp_march_1d


def _inputs(nx: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    nt = nx
    hx, ht = 0.5 / (nx - 1), 1.0 / (nt - 1)
    x = np.linspace(0.0, 0.5, nx)
    t = np.linspace(0.0, 1.0, nt)[:, None]
    u = np.cos(2 * x + t) + 0.01 * rng.standard_normal((nt, nx))
    k2 = (0.5 + 0.5 * x) ** 2
    k2mid = 0.5 * (k2[1:] + k2[:-1])
    src = np.sin(3 * x - t)
    edges = np.linspace(0.0, 1.0, nt)
    bell = (u[-1], src, k2, np.cos(edges), np.cos(1 + edges), 0.1, hx, ht)
    fp = (1 + 0.3 * np.sin(3 * x), u, k2mid, src, 1 + 0 * edges, 1 + 0 * edges, 0.1, hx, ht)
    return bell, fp


def _best(fn, args, which, repeat):
    fn(*args, which=which)  # warm-up / compile
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args, which=which)
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="41,161,641")
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if not HAVE_NUMBA:
        print("numba is not installed; only the numpy backend can run")
    backends = ("numba", "numpy") if HAVE_NUMBA else ("numpy",)
    print(f"{'kernel':<10}{'nx=nt':>7}{'backend':>9}{'best [ms]':>12}{'speedup':>10}{'max |diff|':>13}")
    for nx in (int(s) for s in args.sizes.split(",")):
        bell, fp = _inputs(nx)
        for name, fn, a in (("bellman", bellman_march_1d, bell), ("fp", fp_march_1d, fp)):
            res = {b: _best(fn, a, b, args.repeat) for b in backends}
            ref_t, ref = res["numpy"]
            for b in backends:
                dt, out = res[b]
                diff = float(np.max(np.abs(out - ref)))
                print(f"{name:<10}{nx:>7}{b:>9}{1e3 * dt:>12.3f}{ref_t / dt:>10.1f}{diff:>13.2e}")


if __name__ == "__main__":
    main()
