# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled all-pairs sweep used by the sampled distortion estimator.

For lattices of n points the estimator visits n*(n-1)/2 pairs; this loop
dominates the runtime of every certification step, hence the compiled
kernel.  Semantics must match kernels.pairwise_distortion_numpy exactly.
"""

from libc.math cimport sqrt, INFINITY


def pairwise_distortion(double[:, ::1] xs, double[:, ::1] ys):
    """Return (max pair ratio, min image distance over distinct sources).

    The ratio for a pair is max(|y_i-y_j|/|x_i-x_j|, |x_i-x_j|/|y_i-y_j|);
    pairs with coincident sources are skipped.  A coincident image pair
    yields min_image_distance == 0.0 (the caller decides how to fail).
    """
    cdef Py_ssize_t n = xs.shape[0]
    cdef Py_ssize_t d = xs.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double dx2, dy2, diff, ratio2, best2, min_img2
    best2 = 1.0
    min_img2 = INFINITY
    for i in range(n - 1):
        for j in range(i + 1, n):
            dx2 = 0.0
            dy2 = 0.0
            for k in range(d):
                diff = xs[i, k] - xs[j, k]
                dx2 += diff * diff
                diff = ys[i, k] - ys[j, k]
                dy2 += diff * diff
            if dx2 == 0.0:
                continue
            if dy2 < min_img2:
                min_img2 = dy2
            if dy2 == 0.0:
                continue
            ratio2 = dy2 / dx2
            if ratio2 < 1.0:
                ratio2 = 1.0 / ratio2
            if ratio2 > best2:
                best2 = ratio2
    if min_img2 == INFINITY:
        min_img2 = 0.0
    return sqrt(best2), sqrt(min_img2)


def pairwise_sup_ratio(double[:, ::1] xs, double[:, ::1] ys):
    """Max of |y_i-y_j|/|x_i-x_j| over pairs with distinct sources (one-sided)."""
    cdef Py_ssize_t n = xs.shape[0]
    cdef Py_ssize_t d = xs.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double dx2, dy2, diff, best2
    best2 = 0.0
    for i in range(n - 1):
        for j in range(i + 1, n):
            dx2 = 0.0
            dy2 = 0.0
            for k in range(d):
                diff = xs[i, k] - xs[j, k]
                dx2 += diff * diff
                diff = ys[i, k] - ys[j, k]
                dy2 += diff * diff
            if dx2 == 0.0:
                continue
            ratio2 = dy2 / dx2
            if ratio2 > best2:
                best2 = ratio2
    return sqrt(best2)
