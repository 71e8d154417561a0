"""Factoring model maps (diagonal, rotation, full linear, shrink, translation
along a path) into certified small-distortion factors, plus gluing operators.

Every emitted factor comes with a sampled distortion certificate; builders
auto-retry with smaller internal steps when a certificate exceeds its
target.  Compactly supported factors are produced by blending a near-identity
map to the identity across an annulus, then certifying the blend a
posteriori; there is no uncertified extension step anywhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry_core import (
    AffineMapData,
    Cube,
    GeometryError,
    SVD_TOL,
    bilip_constant,
    check_matrix,
    cube_lattice,
    rotation_2d,
    rotation_3d,
    svd,
)
from .map_engine import (
    Affine,
    Blend,
    CertificationError,
    Compose,
    DistortionCertificate,
    Identity,
    MapExpr,
    Translation,
    compose_sequence,
    estimate_distortion,
    sup_distance,
)

# Lattice density for per-factor certificates (points per axis).
CERT_POINTS = {2: 9, 3: 5}
MAX_RETRIES = 4


class FactorCertificationError(CertificationError):
    """A factor's sampled distortion exceeded the target after all retries."""

    def __init__(self, index: int, bound: float, target: float):
        super().__init__(
            f"factor {index} certified at {bound:.6f} > target {target:.6f} after retries"
        )
        self.index = index
        self.bound = bound
        self.target = target


@dataclass(eq=False)
class FactorSequence:
    """Ordered factors (applied first-to-last) realizing a target map.

    support is the cube outside which every factor is the identity (None
    for sequences of global linear factors).  certificates[i] is the
    sampled (or exact-affine) distortion bound for factors[i].
    """

    factors: list[MapExpr]
    target: MapExpr
    region: Cube
    support: Cube | None
    certificates: list[DistortionCertificate]
    meta: dict = field(default_factory=dict)

    @property
    def T(self) -> int:
        return len(self.factors)

    def composite(self) -> MapExpr:
        return compose_sequence(self.factors)

    def max_certified(self) -> float:
        return max((c.L_lo for c in self.certificates), default=1.0)


def _cert_pitch(cube: Cube) -> float:
    return cube.side / (CERT_POINTS[cube.dim] - 1)


_cert_cache: dict = {}


def _certify_blend_factor(factor: Blend, target: float, normalized_key=None) -> DistortionCertificate:
    """Sampled certificate of a blend factor over its own support cube.

    normalized_key enables reuse across congruent factors (identical up to
    translation); the cached value is what the estimator returns for any
    congruent twin.
    """
    support = factor.cube.dilate(factor.lam)
    if normalized_key is not None and normalized_key in _cert_cache:
        l_lo, h, pc = _cert_cache[normalized_key]
        cert = DistortionCertificate(region=support, h=h, L_lo=l_lo, method="sampled-pairs", pair_count=pc)
    else:
        cert = estimate_distortion(factor, support, _cert_pitch(support))
        if normalized_key is not None:
            _cert_cache[normalized_key] = (cert.L_lo, cert.h, cert.pair_count)
    return cert


def _rotation_angle_axis(r: np.ndarray) -> tuple[float, np.ndarray | None]:
    d = r.shape[0]
    if d == 2:
        return math.atan2(r[1, 0], r[0, 0]), None
    tr = float(np.trace(r))
    theta = math.acos(min(1.0, max(-1.0, (tr - 1.0) / 2.0)))
    if theta < 1e-14:
        return 0.0, None
    if theta < math.pi - 1e-9:
        axis = np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
        return theta, axis / (2.0 * math.sin(theta))
    # theta == pi: axis from the dominant column of (r + I) / 2.
    m = (r + np.eye(3)) / 2.0
    k = int(np.argmax(np.diag(m)))
    axis = m[:, k]
    return math.pi, axis / np.linalg.norm(axis)


def rotation_step_count(theta: float, alpha: float) -> int:
    """Minimal N with ||R_step - I|| = 2 sin(theta / 2N) strictly below alpha."""
    theta = abs(theta)
    if theta == 0.0:
        return 0
    if alpha >= 2.0:
        return 1
    n = max(1, math.ceil(theta / (2.0 * math.asin(alpha / 2.0)) - 1e-12))
    while 2.0 * math.sin(theta / (2.0 * n)) >= alpha:
        n += 1
    return n


def _rotation_steps(r: np.ndarray, alpha: float) -> list[np.ndarray]:
    theta, axis = _rotation_angle_axis(r)
    n = rotation_step_count(theta, alpha)
    if n == 0:
        return []
    if r.shape[0] == 2:
        step = rotation_2d(theta / n)
    else:
        step = rotation_3d(axis, theta / n)
    return [step] * n


def diagonal_step_count(l_bound: float, alpha: float) -> int:
    """Minimal n with L^(1/n) strictly below 1 + alpha."""
    if l_bound <= 1.0 + SVD_TOL:
        return 1
    n = max(1, math.ceil(math.log(l_bound) / math.log1p(alpha) - 1e-12))
    while l_bound ** (1.0 / n) >= 1.0 + alpha:
        n += 1
    return n


def _diagonal_steps(sigma: np.ndarray, alpha: float, l_bound: float) -> list[np.ndarray]:
    d = sigma.shape[0]
    if np.all(np.abs(sigma - 1.0) <= SVD_TOL):
        return []
    n = diagonal_step_count(l_bound, alpha)
    steps = []
    for k in range(d):
        factor = sigma[k] ** (1.0 / n)
        for _ in range(n):
            m = np.eye(d)
            m[k, k] = factor
            steps.append(m)
    return steps


_PROBE_REGION = {2: Cube((0.0, 0.0), 2.0), 3: Cube((0.0, 0.0, 0.0), 2.0)}


def factor_diagonal(sigma, alpha: float, l_bound: float) -> FactorSequence:
    """Split diag(sigma) into d*n single-entry diagonal factors near the identity.

    n is the smallest integer with L^(1/n) < 1 + alpha; partial products
    keep every diagonal entry inside [1/L, L].  All-ones sigma yields an
    empty sequence.
    """
    sigma = np.asarray(sigma, dtype=float).reshape(-1)
    d = sigma.shape[0]
    if d not in (2, 3):
        raise GeometryError("sigma must have length 2 or 3")
    if np.any(sigma <= 0):
        raise GeometryError("sigma entries must be positive")
    if not (0 < alpha < 1):
        raise GeometryError("alpha must lie in (0, 1)")
    if np.any(sigma > l_bound + 1e-12) or np.any(sigma < 1.0 / l_bound - 1e-12):
        raise GeometryError("sigma outside [1/L, L]")
    steps = _diagonal_steps(sigma, alpha, l_bound)
    target = Affine(AffineMapData(np.diag(sigma), np.zeros(d)))
    factors = [Affine(AffineMapData(m, np.zeros(d))) for m in steps]
    certs = [estimate_distortion(f, _PROBE_REGION[d], 1.0) for f in factors]
    return FactorSequence(
        factors=factors,
        target=target,
        region=_PROBE_REGION[d],
        support=None,
        certificates=certs,
        meta={"steps": steps, "n_per_axis": len(steps) // d if steps else 0},
    )


def factor_rotation(r, alpha: float) -> FactorSequence:
    """Split a rotation into N equal-angle steps with ||step - I|| < alpha.

    d=2 uses the rotation angle directly; d=3 uses the axis-angle form.
    The step norm 2 sin(theta/2N) is exact, and the N-fold product equals
    the input to within 1e-10.
    """
    r = check_matrix(r)
    d = r.shape[0]
    if np.abs(r @ r.T - np.eye(d)).max() > 1e-9:
        raise GeometryError("input is not orthogonal")
    if np.linalg.det(r) < 0:
        raise GeometryError("orientation-reversing isometry cannot be factored")
    steps = _rotation_steps(r, alpha)
    factors = [Affine(AffineMapData(m, np.zeros(d))) for m in steps]
    certs = [estimate_distortion(f, _PROBE_REGION[d], 1.0) for f in factors]
    return FactorSequence(
        factors=factors,
        target=Affine(AffineMapData(r, np.zeros(d))),
        region=_PROBE_REGION[d],
        support=None,
        certificates=certs,
        meta={"steps": steps},
    )


def _linear_chain(a: np.ndarray, alpha: float) -> list[np.ndarray]:
    """Near-identity linear steps (rotation, diagonal, rotation) multiplying to a."""
    dec = svd(a)
    l_bound = max(dec.sigma[0], 1.0 / dec.sigma[-1])
    return (
        _rotation_steps(dec.v_t, alpha)
        + _diagonal_steps(dec.sigma, alpha, l_bound)
        + _rotation_steps(dec.u, alpha)
    )


def factor_linear_in_cube(
    a: AffineMapData | np.ndarray,
    q: Cube,
    c_support: float,
    epsilon: float,
) -> FactorSequence:
    """Factor an orientation-preserving linear map on a cube at the origin.

    The rotation-diagonal-rotation chain of near-identity linear steps is
    applied one step at a time; each step acts linearly on the running
    image of q and blends to the identity across an annulus of relative
    width c_support, so every factor is the identity outside the cube of
    side c_support * L * sqrt(d) * l(q).  Each factor is certified at or
    below 1 + epsilon (internal step size auto-halves on failure).
    """
    mat = a.matrix if isinstance(a, AffineMapData) else check_matrix(a)
    if isinstance(a, AffineMapData) and np.any(np.abs(a.shift) > 1e-12):
        raise GeometryError("expected a linear map (zero translation)")
    d = mat.shape[0]
    if np.linalg.det(mat) <= 0:
        raise GeometryError("linear factoring requires an orientation-preserving map")
    if np.max(np.abs(np.asarray(q.center))) > 1e-12:
        raise GeometryError("cube must be centered at the origin")
    if not (c_support > 1.0):
        raise GeometryError("support constant must exceed 1")
    l_bound = bilip_constant(mat)
    support = Cube(q.center, c_support * l_bound * math.sqrt(d) * q.side)
    target = Affine(AffineMapData(mat, np.zeros(d)))

    if np.abs(mat - np.eye(d)).max() <= SVD_TOL:
        return FactorSequence([], target, q, support, [], meta={"alpha": 0.0, "linear_steps": []})

    alpha0 = epsilon / (4.0 * c_support * l_bound * math.sqrt(d))
    # Strict w == 1 margin over the running image (see factor_shrink).
    margin = min(1.1, math.sqrt(c_support))
    last_fail: tuple[int, float] | None = None
    for attempt in range(MAX_RETRIES + 1):
        alpha = alpha0 / 2**attempt
        steps = _linear_chain(mat, alpha)
        factors: list[MapExpr] = []
        certs: list[DistortionCertificate] = []
        partial = np.eye(d)
        ok = True
        for idx, step in enumerate(steps):
            verts = q.vertices() @ partial.T
            s_i = 2.0 * float(np.max(np.abs(verts)))
            cube_i = Cube(q.center, margin * s_i)
            factor = Blend(Affine(AffineMapData(step, np.zeros(d))), cube_i, c_support / margin)
            cert = _certify_blend_factor(factor, 1.0 + epsilon)
            if cert.L_lo > 1.0 + epsilon + 1e-12:
                last_fail = (idx, cert.L_lo)
                ok = False
                break
            factors.append(factor)
            certs.append(cert)
            partial = step @ partial
        if ok:
            fs = FactorSequence(
                factors, target, q, support, certs, meta={"alpha": alpha, "linear_steps": steps}
            )
            err = sup_distance(fs.composite(), target, q, q.side / 8)
            if err > 1e-9 * q.diam:
                raise CertificationError(f"composite deviates from target by {err:.3e} on the cube")
            return fs
    raise FactorCertificationError(last_fail[0], last_fail[1], 1.0 + epsilon)


def factor_shrink(q: Cube, lam: float, c: float, epsilon: float) -> FactorSequence:
    """Factor x -> center + c (x - center) on q into blended radial scalings.

    Factors are the identity outside lam * q; c may exceed 1 (expansion)
    as long as lam > c so the growing image keeps clear of the support
    boundary.  Step scale auto-halves on certification failure.
    """
    d = q.dim
    if not (c > 0):
        raise GeometryError("scale factor must be positive")
    if not (lam > max(1.0, c)):
        raise GeometryError("need lam > max(1, c) for the support to contain the motion")
    center = np.asarray(q.center)
    target = Affine(AffineMapData(c * np.eye(d), (1.0 - c) * center))
    support = q.dilate(lam)
    if abs(c - 1.0) <= SVD_TOL:
        return FactorSequence([], target, q, support, [], meta={"steps": 0})

    # The blend cube carries a strict margin over the moving cube so that
    # cube points sit in the w == 1 interior (an exact-boundary point would
    # lag by rounding and the lag compounds across steps).
    margin = min(1.2, (lam / max(1.0, c)) ** 0.25)
    lam_min = lam / (margin * max(1.0, c))
    kappa = 1.0 + math.sqrt(d) * lam_min / (lam_min - 1.0)
    cap0 = 0.99 * epsilon / ((1.0 + epsilon) * kappa)
    last_fail: tuple[int, float] | None = None
    for attempt in range(MAX_RETRIES + 1):
        cap = cap0 / 2**attempt
        n = max(1, math.ceil(abs(math.log(c)) / math.log1p(cap) - 1e-12))
        step = c ** (1.0 / n)
        factors: list[MapExpr] = []
        certs: list[DistortionCertificate] = []
        ok = True
        for i in range(n):
            r_prev = c ** (i / n)
            cube_i = q.dilate(margin * r_prev)
            lam_i = lam / (margin * r_prev)
            inner = Affine(AffineMapData(step * np.eye(d), (1.0 - step) * center))
            factor = Blend(inner, cube_i, lam_i)
            key = ("shrink", d, round(step, 14), round(cube_i.side, 14), round(lam_i, 12))
            cert = _certify_blend_factor(factor, 1.0 + epsilon, normalized_key=key)
            if cert.L_lo > 1.0 + epsilon + 1e-12:
                last_fail = (i, cert.L_lo)
                ok = False
                break
            factors.append(factor)
            certs.append(cert)
        if ok:
            return FactorSequence(factors, target, q, support, certs, meta={"steps": n, "step_scale": step})
    raise FactorCertificationError(last_fail[0], last_fail[1], 1.0 + epsilon)


def _polyline_resample_by_step(path: np.ndarray, delta: float) -> np.ndarray:
    seg = np.linalg.norm(np.diff(path, axis=0), axis=1)
    total = float(seg.sum())
    if total == 0.0:
        return path[:1]
    n = max(1, int(math.ceil(total / delta - 1e-12)))
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    s = np.linspace(0.0, total, n + 1)
    idx = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(seg) - 1)
    t = (s - cum[idx]) / np.maximum(seg[idx], 1e-300)
    return path[idx] + t[:, None] * (path[idx + 1] - path[idx])


TRANSLATION_BLEND_LAM = 4.0  # support C(x, 4 l) stays within 2 diam(q) of the path


def factor_translation_along_path(q: Cube, path: np.ndarray, epsilon: float) -> FactorSequence:
    """Carry a cube along a rectifiable path by blended translation steps.

    Each factor translates the current cube C(p_j, l(q)) to C(p_{j+1}, l(q))
    and is the identity outside C(p_j, 4 l(q)), hence at every point farther
    than 2 diam(q) from the path.  The composite acts as the pure
    translation to the path endpoint on q.  Step length auto-halves on
    certification failure.
    """
    path = np.atleast_2d(np.asarray(path, dtype=float))
    d = q.dim
    if path.shape[1] != d:
        raise GeometryError("path dimension mismatch")
    if np.max(np.abs(path[0] - np.asarray(q.center))) > 1e-12:
        raise GeometryError("path must start at the cube center")
    end = path[-1]
    target = Translation(tuple(end - np.asarray(q.center)))
    total = float(np.sum(np.linalg.norm(np.diff(path, axis=0), axis=1)))
    tube = Cube(tuple((path.min(axis=0) + path.max(axis=0)) / 2.0),
                float(np.max(path.max(axis=0) - path.min(axis=0)) + 4.0 * q.side))
    if total == 0.0:
        return FactorSequence([], target, q, tube, [], meta={"steps": 0})

    # Blend cube 1.5x the moving cube (strict w == 1 margin over the cube;
    # an exact-boundary point would lag by rounding and the lag compounds),
    # outer support still C(node, 4 l(q)).
    blend_side = 1.5 * q.side
    lam = TRANSLATION_BLEND_LAM / 1.5
    delta0 = 0.95 * (epsilon / (1.0 + epsilon)) * (lam - 1.0) * blend_side / 2.0
    last_fail: tuple[int, float] | None = None
    for attempt in range(MAX_RETRIES + 1):
        delta = delta0 / 2**attempt
        nodes = _polyline_resample_by_step(path, delta)
        factors: list[MapExpr] = []
        certs: list[DistortionCertificate] = []
        ok = True
        for j in range(len(nodes) - 1):
            v = nodes[j + 1] - nodes[j]
            factor = Blend(Translation(tuple(v)), Cube(tuple(nodes[j]), blend_side), lam)
            key = ("translate", d, tuple(np.round(v / q.side, 12)), round(q.side, 14), lam)
            cert = _certify_blend_factor(factor, 1.0 + epsilon, normalized_key=key)
            if cert.L_lo > 1.0 + epsilon + 1e-12:
                last_fail = (j, cert.L_lo)
                ok = False
                break
            factors.append(factor)
            certs.append(cert)
        if ok:
            return FactorSequence(
                factors, target, q, tube, certs,
                meta={"steps": len(factors), "delta": delta, "path_length": total},
            )
    raise FactorCertificationError(last_fail[0], last_fail[1], 1.0 + epsilon)


def factor_linear_outside_cube(
    a: AffineMapData | np.ndarray,
    q: Cube,
    c_support: float,
    epsilon: float,
) -> FactorSequence:
    """Factor a linear map on the complement of a cube at the origin.

    Same chain as factor_linear_in_cube with inverted supports: each factor
    acts as its linear step outside an inscribed cube of the running image
    of q and is the identity on a reported inner cube (meta
    "identity_inside", which contains (1/(c_support L sqrt(d))) q).
    """
    mat = a.matrix if isinstance(a, AffineMapData) else check_matrix(a)
    d = mat.shape[0]
    if np.linalg.det(mat) <= 0:
        raise GeometryError("linear factoring requires an orientation-preserving map")
    if np.max(np.abs(np.asarray(q.center))) > 1e-12:
        raise GeometryError("cube must be centered at the origin")
    l_bound = bilip_constant(mat)
    target = Affine(AffineMapData(mat, np.zeros(d)))
    probe = Cube(q.center, c_support * l_bound * math.sqrt(d) * q.side)
    if np.abs(mat - np.eye(d)).max() <= SVD_TOL:
        return FactorSequence([], target, probe, None, [], meta={"identity_inside": q})

    alpha0 = epsilon / (4.0 * c_support * l_bound * math.sqrt(d))
    last_fail: tuple[int, float] | None = None
    for attempt in range(MAX_RETRIES + 1):
        alpha = alpha0 / 2**attempt
        steps = _linear_chain(mat, alpha)
        factors: list[MapExpr] = []
        certs: list[DistortionCertificate] = []
        partial = np.eye(d)
        inner_side = math.inf
        ok = True
        for idx, step in enumerate(steps):
            inv_partial = np.linalg.inv(partial)
            # Largest axis cube inscribed in partial(q): row-sum norm of the inverse.
            row_sums = np.abs(inv_partial).sum(axis=1)
            s_inscribed = q.side / float(np.max(row_sums))
            s_inner = s_inscribed / c_support
            inner_side = min(inner_side, s_inner)
            cube_i = Cube(q.center, s_inner)
            step_map = AffineMapData(step, np.zeros(d))
            factor = Compose((Affine(step_map), Blend(Affine(step_map.inverse()), cube_i, c_support)))
            cert = estimate_distortion(factor, Cube(q.center, 2.0 * c_support * s_inner), _cert_pitch(cube_i))
            if cert.L_lo > 1.0 + epsilon + 1e-12:
                last_fail = (idx, cert.L_lo)
                ok = False
                break
            factors.append(factor)
            certs.append(cert)
            partial = step @ partial
        if ok:
            fs = FactorSequence(
                factors, target, probe, None, certs,
                meta={"alpha": alpha, "identity_inside": Cube(q.center, inner_side)},
            )
            pts, _ = cube_lattice(probe, probe.side / 16)
            outside = pts[~q.contains(pts, tol=1e-12)]
            err = float(np.max(np.linalg.norm(fs.composite().evaluate(outside) - target.evaluate(outside), axis=1)))
            if err > 1e-9 * probe.diam:
                raise CertificationError(f"composite deviates from target outside the cube by {err:.3e}")
            return fs
    raise FactorCertificationError(last_fail[0], last_fail[1], 1.0 + epsilon)


@dataclass(frozen=True, eq=False, slots=True)
class Piecewise(MapExpr):
    """Map equal to each piece on its (closed) region and the identity elsewhere."""

    pieces: tuple[tuple[Cube, MapExpr], ...]

    def evaluate(self, pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        out = np.array(pts, copy=True)
        claimed = np.zeros(pts.shape[0], dtype=bool)
        for region, m in self.pieces:
            mask = region.contains(pts) & ~claimed
            if np.any(mask):
                out[mask] = m.evaluate(pts[mask])
                claimed |= mask
        return out


@dataclass(frozen=True)
class GlueReport:
    piece_bounds: tuple[float, ...]
    glued: DistortionCertificate
    bound: float


def glue_identity_outside(
    pieces: list[tuple[Cube, MapExpr]], h: float
) -> tuple[MapExpr, GlueReport]:
    """Glue maps supported on non-overlapping cubes, identity elsewhere.

    Each piece must send its cube into itself and fix the cube boundary
    (lattice-checked to 1e-9).  The glued sampled distortion is certified
    against the square of the largest piece bound.
    """
    if not pieces:
        return Identity(), GlueReport((), DistortionCertificate(_PROBE_REGION[2], 0.0, 1.0, "exact-affine", 0), 1.0)
    for i, (r1, _) in enumerate(pieces):
        for r2, _ in pieces[i + 1 :]:
            if r1.overlaps(r2, tol=1e-12):
                raise GeometryError("piece regions have overlapping interiors")
    bounds = []
    for region, m in pieces:
        ring = _boundary_lattice(region, h)
        dev = float(np.max(np.linalg.norm(m.evaluate(ring) - ring, axis=1)))
        if dev > 1e-9:
            raise GeometryError(f"not identity on boundary (deviation {dev:.3e})")
        pts, _ = cube_lattice(region, h)
        imgs = m.evaluate(pts)
        if not np.all(region.contains(imgs, tol=1e-9)):
            raise GeometryError("piece does not map its region into itself")
        bounds.append(estimate_distortion(m, region, h).L_lo)
    glued = Piecewise(tuple(pieces))
    lo = np.min([r.lo() for r, _ in pieces], axis=0)
    hi = np.max([r.hi() for r, _ in pieces], axis=0)
    span = float(np.max(hi - lo)) * 1.2
    hull = Cube(tuple((lo + hi) / 2.0), span)
    cert = estimate_distortion(glued, hull, h)
    bound = max(bounds) ** 2
    if cert.L_lo > bound + 1e-6:
        raise CertificationError(
            f"glued distortion {cert.L_lo:.6f} exceeds the squared piece bound {bound:.6f}"
        )
    return glued, GlueReport(tuple(bounds), cert, bound)


def _boundary_lattice(region: Cube, h: float) -> np.ndarray:
    pts, _ = cube_lattice(region, h)
    lo, hi = region.lo(), region.hi()
    on_face = np.any(
        (np.abs(pts - lo) < 1e-12 * region.side) | (np.abs(pts - hi) < 1e-12 * region.side), axis=1
    )
    return pts[on_face]


def glue_two(
    a1: Cube, f1: MapExpr, a2: Cube, f2: MapExpr, h: float
) -> tuple[MapExpr, GlueReport]:
    """Glue two maps that agree on the overlap of their (covering) regions.

    Bijectivity is spot-checked by winding degree +1 at sampled interior
    targets (planar case); the glued sampled distortion is certified
    against max of the piece bounds.
    """
    from .geometry_core import box_lattice

    lo = np.minimum(a1.lo(), a2.lo())
    hi = np.maximum(a1.hi(), a2.hi())
    hull = Cube(tuple((lo + hi) / 2.0), float(np.max(hi - lo)))
    pts = box_lattice(lo, hi, h)  # the working box is the union's bounding box
    in1 = a1.contains(pts, tol=1e-12)
    in2 = a2.contains(pts, tol=1e-12)
    if not np.all(in1 | in2):
        raise GeometryError("regions do not cover the working cube")
    both = in1 & in2
    if np.any(both):
        dev = float(np.max(np.linalg.norm(f1.evaluate(pts[both]) - f2.evaluate(pts[both]), axis=1)))
        if dev > 1e-9:
            raise GeometryError(f"pieces disagree on the overlap (deviation {dev:.3e})")
    glued = Piecewise(((a1, f1), (a2, f2)))
    b1 = estimate_distortion(f1, a1, h).L_lo
    b2 = estimate_distortion(f2, a2, h).L_lo
    from . import kernels

    ratio, min_img = kernels.pairwise_distortion(pts, glued.evaluate(pts))
    if min_img == 0.0:
        raise CertificationError("not injective on samples: coincident images")
    cert = DistortionCertificate(
        region=hull, h=h, L_lo=max(1.0, ratio), method="sampled-pairs",
        pair_count=pts.shape[0] * (pts.shape[0] - 1) // 2,
    )
    bound = max(b1, b2)
    if cert.L_lo > bound + 1e-6:
        raise CertificationError(
            f"glued distortion {cert.L_lo:.6f} exceeds the piece bound {bound:.6f}"
        )
    if hull.dim == 2:
        from .degree import degree_winding_2d

        boundary = np.array(
            [[lo[0], lo[1]], [hi[0], lo[1]], [hi[0], hi[1]], [lo[0], hi[1]], [lo[0], lo[1]]]
        )
        inset = 0.25 * (hi - lo)
        targets = box_lattice(lo + inset, hi - inset, float(np.max(hi - lo)) / 4)
        for x in targets[:9]:
            deg = degree_winding_2d(glued, glued(x), boundary)
            if deg != 1:
                raise CertificationError(f"bijectivity spot-check failed: degree {deg} at {x}")
    return glued, GlueReport((b1, b2), cert, bound)


def check_factor_sequence(
    fs: FactorSequence,
    epsilon: float | None = None,
    agreement_h: float | None = None,
) -> dict:
    """Re-verify a factor sequence's contracts; returns a report dict.

    Checks composite-vs-target agreement on the region lattice, per-factor
    certificates against 1 + epsilon (when given), and identity outside the
    support on a surrounding shell lattice.
    """
    region = fs.region
    h = agreement_h if agreement_h is not None else region.side / 16
    agree = sup_distance(fs.composite(), fs.target, region, h)
    report = {
        "T": fs.T,
        "agreement_sup": agree,
        "agreement_ok": agree <= 1e-9 * region.diam,
        "max_certified": fs.max_certified(),
    }
    if epsilon is not None:
        report["certificates_ok"] = all(c.L_lo <= 1.0 + epsilon + 1e-12 for c in fs.certificates)
    if fs.support is not None:
        shell, _ = cube_lattice(fs.support.dilate(1.5), fs.support.side / 8)
        outside = shell[~fs.support.contains(shell, tol=1e-12)]
        worst = 0.0
        for f in fs.factors:
            worst = max(worst, float(np.max(np.linalg.norm(f.evaluate(outside) - outside, axis=1))))
            if worst > 1e-12:
                break
        report["support_identity_dev"] = worst
        report["support_ok"] = worst <= 1e-12
    return report
