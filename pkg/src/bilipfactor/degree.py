"""Local topological degree: simplex-sign sums for piecewise-affine maps and
winding numbers for planar maps.

The two computations are independent of each other and are cross-checked in
the test suite; they serve as the injectivity/surjectivity oracle for the
piecewise-affine verifier.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry_core import Cube
from .map_engine import MapExpr

# Deterministic tie-break direction for non-regular targets.
_PERTURB_DIR = np.array([1.0, 1.0 / math.pi, 1.0 / math.pi**2])
PERTURB_SIZE = 1e-9
FACE_TOL = 1e-12


class DegreeError(RuntimeError):
    pass


def _barycentric(image_vertices: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Barycentric coordinates of y in the simplex spanned by (d+1) image vertices."""
    v0 = image_vertices[0]
    mat = (image_vertices[1:] - v0).T
    lam = np.linalg.solve(mat, y - v0)
    return np.concatenate([[1.0 - lam.sum()], lam])


def simplex_sum_degree(
    image_simplices: np.ndarray,
    orientations: np.ndarray,
    y: np.ndarray,
    perturb: bool = True,
) -> int:
    """Degree at y: sum of orientation signs over simplices whose image covers y.

    image_simplices has shape (m, d+1, d); orientations holds the signs of
    the per-simplex determinants.  A target on a face image (within
    FACE_TOL relative to the simplex size) is perturbed once along the
    fixed direction; failure after the retry raises "non-regular value".
    """
    y = np.asarray(y, dtype=float)
    d = y.shape[0]
    for attempt in range(2):
        target = y if attempt == 0 else y + PERTURB_SIZE * _PERTURB_DIR[:d]
        total = 0
        regular = True
        lo = image_simplices.min(axis=1)
        hi = image_simplices.max(axis=1)
        scale = np.maximum(np.max(hi - lo, axis=1), 1e-300)
        near = np.all((target >= lo - FACE_TOL * scale[:, None]) &
                      (target <= hi + FACE_TOL * scale[:, None]), axis=1)
        for idx in np.nonzero(near)[0]:
            try:
                lam = _barycentric(image_simplices[idx], target)
            except np.linalg.LinAlgError:
                continue
            tol = FACE_TOL
            if np.all(lam >= tol):
                total += int(orientations[idx])
            elif np.all(lam >= -tol):
                regular = False
                break
        if regular:
            return total
        if not perturb:
            break
    raise DegreeError("non-regular value: target on a simplex face image")


def degree_pl(pl, y: np.ndarray, domain=None) -> int:
    """Local degree of a piecewise-affine map at y over a simplex-union domain.

    pl must expose image_simplices(domain) -> (image_simplices, orientations);
    domain defaults to the whole covered box.
    """
    sims, signs = pl.image_simplices(domain)
    return simplex_sum_degree(sims, signs, np.asarray(y, dtype=float))


def _polyline_length(path: np.ndarray) -> float:
    return float(np.sum(np.linalg.norm(np.diff(path, axis=0), axis=1)))


def resample_polyline(path: np.ndarray, count: int) -> np.ndarray:
    """count points spread uniformly in arc length along the polyline."""
    path = np.asarray(path, dtype=float)
    seg = np.linalg.norm(np.diff(path, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    if total == 0:
        return np.repeat(path[:1], count, axis=0)
    s = np.linspace(0.0, total, count)
    out = np.empty((count, path.shape[1]))
    idx = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(seg) - 1)
    t = (s - cum[idx]) / np.maximum(seg[idx], 1e-300)
    out = path[idx] + t[:, None] * (path[idx + 1] - path[idx])
    return out


def degree_winding_2d(m: MapExpr, y: np.ndarray, boundary: np.ndarray) -> int:
    """Winding number of m o boundary around y (planar maps only).

    boundary is a closed polyline (first point repeated last, or closed
    automatically).  The sampling count follows ceil(64 * image perimeter /
    dist(y, image)); the summed angle increments must round to an integer
    with residual <= 1e-6 * 2pi.
    """
    y = np.asarray(y, dtype=float)
    boundary = np.asarray(boundary, dtype=float)
    if y.shape[0] != 2 or boundary.shape[1] != 2:
        raise DegreeError("winding degree is planar only")
    if not np.allclose(boundary[0], boundary[-1]):
        boundary = np.vstack([boundary, boundary[0]])

    probe = m.evaluate(resample_polyline(boundary, 256))
    dist = float(np.min(np.linalg.norm(probe - y, axis=1)))
    if dist <= 0:
        raise DegreeError("target lies on the sampled boundary image")
    perimeter = _polyline_length(probe)
    count = int(min(2_000_000, max(256, math.ceil(64.0 * perimeter / dist))))
    imgs = m.evaluate(resample_polyline(boundary, count + 1))

    rel = imgs - y
    dist = float(np.min(np.linalg.norm(rel, axis=1)))
    step = float(np.max(np.linalg.norm(np.diff(imgs, axis=0), axis=1)))
    if dist < 10.0 * step:
        raise DegreeError("insufficient boundary resolution near the target")
    ang = np.arctan2(rel[:, 1], rel[:, 0])
    inc = np.diff(ang)
    inc = (inc + math.pi) % (2.0 * math.pi) - math.pi
    total = float(np.sum(inc))
    winding = round(total / (2.0 * math.pi))
    if abs(total - 2.0 * math.pi * winding) > 1e-6 * 2.0 * math.pi:
        raise DegreeError("insufficient boundary resolution: non-integer winding")
    return int(winding)


@dataclass(frozen=True)
class CloseDegreeResult:
    verdict: str  # "equal" | "unequal" | "hypothesis-unverifiable"
    degree1: int | None = None
    degree2: int | None = None


def check_close_degree(
    h1: MapExpr, h2: MapExpr, p: np.ndarray, domain: Cube, h: float
) -> CloseDegreeResult:
    """Degrees of two maps at p agree when they are closer on the boundary
    than p is to either boundary image (checked on a boundary lattice)."""
    if domain.dim != 2:
        raise DegreeError("close-degree check implemented for planar domains")
    p = np.asarray(p, dtype=float)
    verts = np.asarray(domain.vertices())
    ring = verts[[0, 1, 3, 2, 0]]  # square boundary loop
    count = max(16, int(math.ceil(4.0 * domain.side / h)) + 1)
    samples = resample_polyline(ring, count)
    v1 = h1.evaluate(samples)
    v2 = h2.evaluate(samples)
    gap = float(np.max(np.linalg.norm(v1 - v2, axis=1)))
    dist = float(min(np.min(np.linalg.norm(v1 - p, axis=1)), np.min(np.linalg.norm(v2 - p, axis=1))))
    if not gap < dist:
        return CloseDegreeResult("hypothesis-unverifiable")
    d1 = degree_winding_2d(h1, p, ring)
    d2 = degree_winding_2d(h2, p, ring)
    return CloseDegreeResult("equal" if d1 == d2 else "unequal", d1, d2)
