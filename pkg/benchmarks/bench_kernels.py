"""Compiled-vs-NumPy kernel benchmark.

Times the two hot kernels (pairwise distances, path-phasor accumulation) on
both backends over a range of array sizes and reports the speedup plus the
worst entrywise deviation between the implementations.

Usage: python3 benchmarks/bench_kernels.py [--sizes 256,1024,4096] [--repeats 5]
"""

import argparse
import time

import numpy as np

from hspm.backend import get_backend


def point_cloud(rng, n):
    pts = rng.uniform(-1.0, 1.0, (n, 3))
    pts[:, 1] += 10.0           # keep the sets disjoint, distances O(10)
    return np.ascontiguousarray(pts)


def best_of(repeats, fn, *args):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def bench_size(backends, n, repeats, k=2.0e4):
    rng = np.random.default_rng([42, n])
    rx = point_cloud(rng, n)
    tx = point_cloud(rng, n)
    rows = []

    results = {}
    for name, mod in backends.items():
        dt, out = best_of(repeats, mod.pairwise_distances, rx, tx)
        results[name] = (dt, out)
    diff = float(np.max(np.abs(results["cython"][1] - results["numpy"][1]))) \
        if len(results) == 2 else 0.0
    rows.append(("pairwise_distances", n,
                 {b: results[b][0] for b in results}, diff))

    results = {}
    for name, mod in backends.items():
        out = np.zeros((n, n), dtype=np.complex128)
        dt, _ = best_of(repeats, mod.accumulate_path_phasors,
                        out, rx, tx, 1e-3, k, 10.0, False)
        results[name] = (dt, out)
    diff = float(np.max(np.abs(results["cython"][1] - results["numpy"][1]))) \
        if len(results) == 2 else 0.0
    rows.append(("accumulate_path_phasors", n,
                 {b: results[b][0] for b in results}, diff))
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="256,1024,4096",
                    help="comma-separated antenna counts per side")
    ap.add_argument("--repeats", type=int, default=5,
                    help="timing repeats (best-of)")
    args = ap.parse_args()

    backends = {"numpy": get_backend("numpy")}
    try:
        backends["cython"] = get_backend("cython")
    except ImportError:
        print("compiled backend not built; timing the NumPy fallback only")

    header = f"{'kernel':<26} {'n':>6}"
    for b in backends:
        header += f" {b + ' [ms]':>12}"
    if len(backends) == 2:
        header += f" {'speedup':>8} {'max |diff|':>11}"
    print(header)
    print("-" * len(header))

    for n in (int(s) for s in args.sizes.split(",")):
        for kernel, size, times, diff in bench_size(backends, n, args.repeats):
            line = f"{kernel:<26} {size:>6}"
            for b in backends:
                line += f" {times[b] * 1e3:>12.3f}"
            if len(backends) == 2:
                line += f" {times['numpy'] / times['cython']:>7.2f}x {diff:>11.2e}"
            print(line)


if __name__ == "__main__":
    main()
