"""Benchmark: compiled pairwise-sweep kernel vs the NumPy fallback.

The all-pairs ratio sweep dominates certification runtime; this script times
both implementations on the lattice sizes the library actually uses and on a
full certification workload (factoring a linear map on a cube).

Usage:  python benchmarks/bench_kernels.py
"""

from __future__ import annotations

import time

import numpy as np

from bilipfactor import kernels
from bilipfactor.geometry_core import Cube
from bilipfactor.map_engine import LogSpiral


def time_fn(fn, *args, repeats: int = 5) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_pairwise() -> None:
    print(f"compiled extension available: {kernels.HAVE_COMPILED}")
    print()
    print(f"{'points':>8} {'pairs':>12} {'numpy (ms)':>12} {'compiled (ms)':>14} {'speedup':>9}")
    rng = np.random.default_rng(0)
    for n_axis in (9, 17, 33, 65):
        n = n_axis * n_axis
        xs = rng.uniform(0, 1, size=(n, 2))
        ys = LogSpiral(0.3).evaluate(xs + np.array([1.5, 0.0]))
        t_np = time_fn(kernels.pairwise_distortion_numpy, xs, ys)
        row = f"{n:>8} {n * (n - 1) // 2:>12} {t_np * 1e3:>12.2f}"
        if kernels.HAVE_COMPILED:
            from bilipfactor._pairwise import pairwise_distortion as compiled

            a = kernels.pairwise_distortion_numpy(xs, ys)
            b = compiled(np.ascontiguousarray(xs), np.ascontiguousarray(ys))
            assert abs(a[0] - b[0]) < 1e-12 and abs(a[1] - b[1]) < 1e-12, "kernel mismatch"
            t_c = time_fn(compiled, np.ascontiguousarray(xs), np.ascontiguousarray(ys))
            row += f" {t_c * 1e3:>14.2f} {t_np / t_c:>8.1f}x"
        print(row)


def bench_workload() -> None:
    import importlib
    import os

    from bilipfactor.factorization import factor_linear_in_cube

    print()
    print("end-to-end workload: factor diag(2, 1/2) on C(0, 2) at epsilon 0.25")
    q = Cube((0.0, 0.0), 2.0)
    for label, force_pure in (("selected kernel", False), ("forced fallback", True)):
        if force_pure:
            os.environ["BILIPFACTOR_PURE"] = "1"
        else:
            os.environ.pop("BILIPFACTOR_PURE", None)
        importlib.reload(kernels)
        t0 = time.perf_counter()
        fs = factor_linear_in_cube(np.diag([2.0, 0.5]), q, 2.0, 0.25)
        dt = time.perf_counter() - t0
        print(f"  {label:>16}: T = {fs.T}, {dt * 1e3:.0f} ms "
              f"(compiled = {kernels.HAVE_COMPILED})")
    os.environ.pop("BILIPFACTOR_PURE", None)
    importlib.reload(kernels)


if __name__ == "__main__":
    bench_pairwise()
    bench_workload()
