"""Chordal-metric computations on the extended plane and factoring of
translations and scalings into small-spherical-distortion steps.

The sphere of unit diameter is handled entirely through the chart
R^d U {infinity}: the chordal metric has a closed three-case form there,
the point at infinity is first class, and every map under test fixes it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry_core import GeometryError
from .map_engine import Compose, MapExpr, Scaling, Translation


class _Infinity:
    """The point at infinity of the extended plane (a singleton)."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "INFINITY"


INFINITY = _Infinity()

ExtendedPoint = "np.ndarray | _Infinity"


def chordal_distance(x, y) -> float:
    """Chordal metric on R^d U {infinity} (unit-diameter sphere chart).

    chi(x, y) = |x-y| / sqrt((1+|x|^2)(1+|y|^2)) for finite points and
    1 / sqrt(1+|x|^2) when the other point is infinite.
    """
    x_inf = x is INFINITY
    y_inf = y is INFINITY
    if x_inf and y_inf:
        return 0.0
    if x_inf:
        return 1.0 / math.sqrt(1.0 + float(np.dot(y, y)))
    if y_inf:
        return 1.0 / math.sqrt(1.0 + float(np.dot(x, x)))
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return float(
        np.linalg.norm(x - y) / math.sqrt((1.0 + np.dot(x, x)) * (1.0 + np.dot(y, y)))
    )


def _chordal_pairs(pts: np.ndarray, with_infinity: bool) -> np.ndarray:
    """Condensed chordal distance matrix over finite points (+ infinity row)."""
    norms2 = np.einsum("ij,ij->i", pts, pts)
    w = 1.0 / np.sqrt(1.0 + norms2)
    diff = pts[:, None, :] - pts[None, :, :]
    d = np.linalg.norm(diff, axis=2) * w[:, None] * w[None, :]
    if with_infinity:
        d = np.pad(d, ((0, 1), (0, 1)))
        d[-1, :-1] = w
        d[:-1, -1] = w
    return d


def sample_points(dim: int, radius: float, count: int) -> np.ndarray:
    """Deterministic well-spread points in a ball (golden-angle spiral)."""
    i = np.arange(1, count + 1, dtype=float)
    r = radius * np.sqrt(i / count)
    if dim == 2:
        ang = i * math.pi * (3.0 - math.sqrt(5.0))
        pts = np.stack([r * np.cos(ang), r * np.sin(ang)], axis=-1)
    else:
        z = 1.0 - 2.0 * (i - 0.5) / count
        phi = i * math.pi * (3.0 - math.sqrt(5.0))
        s = np.sqrt(np.maximum(0.0, 1.0 - z * z))
        pts = r[:, None] * np.stack([s * np.cos(phi), s * np.sin(phi), z], axis=-1)
    return np.vstack([np.zeros(dim), pts])


def spherical_distortion(m: MapExpr, dim: int = 2, sample_radius: float = 4.0, count: int = 160) -> float:
    """Sampled lower bound on the chordal bi-Lipschitz constant of m.

    m must fix infinity (translations, scalings, and their compositions
    do); pairs include the infinity pairings.
    """
    pts = sample_points(dim, sample_radius, count)
    imgs = m.evaluate(pts)
    d_src = _chordal_pairs(pts, with_infinity=True)
    d_img = _chordal_pairs(imgs, with_infinity=True)
    iu = np.triu_indices(d_src.shape[0], k=1)
    src = d_src[iu]
    img = d_img[iu]
    if np.any(img <= 0.0):
        raise GeometryError("coincident images in the spherical sweep")
    ratios = img / src
    return float(np.max(np.maximum(ratios, 1.0 / ratios)))


def translation_step_bound(step_length: float) -> float:
    """Analytic chordal distortion bound (1 - |v|)^-1 for one translation step."""
    if step_length >= 1.0:
        raise GeometryError("translation step bound requires |v| < 1")
    return 1.0 / (1.0 - step_length)


def scaling_step_bound(a: float) -> float:
    """Analytic chordal distortion bound a (1 - |a^2 - 1|)^-1 for one scaling step.

    Valid for 0 < a < sqrt(2); for a < 1 the formula evaluates to 1/a.
    """
    denom = 1.0 - abs(a * a - 1.0)
    if a <= 0.0 or denom <= 0.0:
        raise GeometryError("scaling step outside the bound's validity range")
    return a / denom


@dataclass(frozen=True)
class SphericalStep:
    map: MapExpr
    analytic_bound: float
    sampled: float


@dataclass(eq=False)
class SphericalFactorReport:
    steps: list[SphericalStep]
    target: MapExpr
    epsilon: float

    @property
    def count(self) -> int:
        return len(self.steps)

    def composite(self) -> MapExpr:
        if not self.steps:
            from .map_engine import Identity

            return Identity()
        return Compose(tuple(reversed([s.map for s in self.steps])))


def factor_translation_sphere(v, epsilon: float, dim: int | None = None) -> SphericalFactorReport:
    """Split a translation into N equal steps of chordal distortion <= 1+epsilon.

    Step length v0 = epsilon / (1 + epsilon) makes the analytic bound
    (1 - v0)^-1 equal 1 + epsilon; N = ceil(|v| / v0).
    """
    if epsilon <= 0:
        raise GeometryError("epsilon must be positive")
    v = np.asarray(v, dtype=float).reshape(-1)
    dim = dim or v.shape[0]
    length = float(np.linalg.norm(v))
    target = Translation(tuple(v))
    if length == 0.0:
        return SphericalFactorReport([], target, epsilon)
    v0 = epsilon / (1.0 + epsilon)
    n = int(math.ceil(length / v0 - 1e-12))
    step_v = v / n
    step = Translation(tuple(step_v))
    bound = translation_step_bound(length / n)
    sampled = spherical_distortion(step, dim=dim)
    steps = [SphericalStep(step, bound, sampled)] * n
    return SphericalFactorReport(list(steps), target, epsilon)


def solve_scaling_step(epsilon: float, tol: float = 1e-12) -> float:
    """Bisection root of a (1 - (a^2 - 1))^-1 == 1 + epsilon on a > 1."""
    target = 1.0 + epsilon
    lo, hi = 1.0, math.sqrt(2.0) - 1e-9
    f = lambda a: a / (1.0 - (a * a - 1.0)) - target
    if f(hi) < 0:
        raise GeometryError("epsilon too large for the per-step scaling bound")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if hi - lo < tol:
            break
        if f(mid) > 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def factor_scaling_sphere(a: float, epsilon: float, dim: int = 2) -> SphericalFactorReport:
    """Split a scaling into equal a^(1/N) steps of chordal distortion <= 1+epsilon."""
    if a <= 0:
        raise GeometryError("scaling factor must be positive")
    if epsilon <= 0:
        raise GeometryError("epsilon must be positive")
    target = Scaling(a) if a != 1.0 else Scaling(1.0)
    if a == 1.0:
        return SphericalFactorReport([], target, epsilon)
    a0 = solve_scaling_step(epsilon)
    n = int(math.ceil(abs(math.log(a)) / math.log(a0) - 1e-12))
    step_a = a ** (1.0 / n)
    step = Scaling(step_a)
    bound = scaling_step_bound(step_a)
    sampled = spherical_distortion(step, dim=dim)
    steps = [SphericalStep(step, bound, sampled)] * n
    return SphericalFactorReport(list(steps), target, epsilon)


def lift_distortion_bound(eps_prime: float) -> float:
    """Chordal bound (1 + e')(1 - e')^-2 for a Euclidean (1+e')-bi-Lipschitz
    origin-fixing map."""
    if not (0.0 <= eps_prime < 1.0):
        raise GeometryError("requires 0 <= eps' < 1")
    return (1.0 + eps_prime) / (1.0 - eps_prime) ** 2


def invert_lift_bound(target: float, tol: float = 1e-12) -> float:
    """Largest eps' whose lift bound stays at or below the target (bisection)."""
    if target < 1.0:
        raise GeometryError("target bound must be at least 1")
    lo, hi = 0.0, 1.0 - 1e-12
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if hi - lo < tol:
            break
        if lift_distortion_bound(mid) > target:
            hi = mid
        else:
            lo = mid
    return lo
