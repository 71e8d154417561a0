"""Hot-loop kernels with a compiled core and a NumPy fallback.

The all-pairs ratio sweep is the inner loop of every sampled distortion
certificate.  At import time we pick the compiled Cython extension when it
is present; otherwise a block-wise NumPy implementation with identical
semantics is used.  Set BILIPFACTOR_PURE=1 to force the fallback (useful
for benchmarking, see benchmarks/bench_kernels.py).
"""

from __future__ import annotations

import os

import numpy as np

_BLOCK = 512


def pairwise_distortion_numpy(xs: np.ndarray, ys: np.ndarray) -> tuple[float, float]:
    """Return (max pair ratio, min image distance over distinct sources).

    Pure-NumPy twin of the compiled kernel: identical pair set, identical
    tie handling (coincident sources skipped, coincident images reported
    through a zero minimum image distance).
    """
    n = xs.shape[0]
    best2 = 1.0
    min_img2 = np.inf
    for i0 in range(0, n - 1, _BLOCK):
        i1 = min(i0 + _BLOCK, n - 1)
        for i in range(i0, i1):
            dx = xs[i + 1 :] - xs[i]
            dy = ys[i + 1 :] - ys[i]
            dx2 = np.einsum("ij,ij->i", dx, dx)
            dy2 = np.einsum("ij,ij->i", dy, dy)
            keep = dx2 > 0.0
            if not np.any(keep):
                continue
            dy2k = dy2[keep]
            m = dy2k.min()
            if m < min_img2:
                min_img2 = m
            pos = dy2k > 0.0
            if np.any(pos):
                r2 = dy2k[pos] / dx2[keep][pos]
                np.maximum(r2, 1.0 / r2, out=r2)
                b = r2.max()
                if b > best2:
                    best2 = b
    if not np.isfinite(min_img2):
        min_img2 = 0.0
    return float(np.sqrt(best2)), float(np.sqrt(min_img2))


def pairwise_sup_ratio_numpy(xs: np.ndarray, ys: np.ndarray) -> float:
    """Max of |y_i-y_j|/|x_i-x_j| over pairs with distinct sources."""
    n = xs.shape[0]
    best2 = 0.0
    for i in range(n - 1):
        dx = xs[i + 1 :] - xs[i]
        dy = ys[i + 1 :] - ys[i]
        dx2 = np.einsum("ij,ij->i", dx, dx)
        dy2 = np.einsum("ij,ij->i", dy, dy)
        keep = dx2 > 0.0
        if np.any(keep):
            b = (dy2[keep] / dx2[keep]).max()
            if b > best2:
                best2 = b
    return float(np.sqrt(best2))


HAVE_COMPILED = False
if os.environ.get("BILIPFACTOR_PURE") != "1":
    try:
        from ._pairwise import pairwise_distortion as _pd_compiled
        from ._pairwise import pairwise_sup_ratio as _ps_compiled

        HAVE_COMPILED = True
    except ImportError:
        pass


def pairwise_distortion(xs: np.ndarray, ys: np.ndarray) -> tuple[float, float]:
    xs = np.ascontiguousarray(xs, dtype=float)
    ys = np.ascontiguousarray(ys, dtype=float)
    if HAVE_COMPILED:
        return _pd_compiled(xs, ys)
    return pairwise_distortion_numpy(xs, ys)


def pairwise_sup_ratio(xs: np.ndarray, ys: np.ndarray) -> float:
    xs = np.ascontiguousarray(xs, dtype=float)
    ys = np.ascontiguousarray(ys, dtype=float)
    if HAVE_COMPILED:
        return _ps_compiled(xs, ys)
    return pairwise_sup_ratio_numpy(xs, ys)
