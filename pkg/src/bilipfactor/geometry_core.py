"""Exact small-dimension linear algebra, cubes, and dyadic-cube combinatorics.

Everything here is a plain value: matrices and vectors are small NumPy
arrays, cubes are frozen dataclasses, and every operation is a pure
function.  Dimensions are restricted to 2 and 3.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

SVD_TOL = 1e-12


class GeometryError(ValueError):
    """Raised on contract violations (singular matrices, bad dimensions...)."""


def check_matrix(m: np.ndarray | list) -> np.ndarray:
    a = np.asarray(m, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] not in (2, 3):
        raise GeometryError(f"expected a 2x2 or 3x3 matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise GeometryError("matrix entries must be finite")
    return a


@dataclass(frozen=True, eq=False, slots=True)
class AffineMapData:
    """x -> matrix @ x + shift.  The carrier for factors, fits and certificates."""

    matrix: np.ndarray
    shift: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "matrix", check_matrix(self.matrix))
        s = np.asarray(self.shift, dtype=float).reshape(-1)
        if s.shape[0] != self.matrix.shape[0] or not np.all(np.isfinite(s)):
            raise GeometryError("shift must be a finite vector matching the matrix")
        object.__setattr__(self, "shift", s)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def apply(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        return pts @ self.matrix.T + self.shift

    def compose(self, other: AffineMapData) -> AffineMapData:
        """self after other: (self.compose(other))(x) == self(other(x))."""
        return AffineMapData(self.matrix @ other.matrix, self.matrix @ other.shift + self.shift)

    def inverse(self) -> AffineMapData:
        inv = np.linalg.inv(self.matrix)
        return AffineMapData(inv, -inv @ self.shift)

    @staticmethod
    def identity(dim: int) -> AffineMapData:
        return AffineMapData(np.eye(dim), np.zeros(dim))


@dataclass(frozen=True, eq=False, slots=True)
class SVDecomposition:
    """m == u @ diag(sigma) @ v_t with orthogonal u, v_t and sigma non-increasing."""

    u: np.ndarray
    sigma: np.ndarray
    v_t: np.ndarray
    degenerate: bool

    def reconstruct(self) -> np.ndarray:
        return self.u @ np.diag(self.sigma) @ self.v_t


def _svd2(m: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # Closed form for 2x2: rotate-scale-rotate angles from the symmetric /
    # antisymmetric split of the matrix.
    a, b = m[0]
    c, d = m[1]
    e = (a + d) / 2.0
    f = (a - d) / 2.0
    g = (c + b) / 2.0
    h = (c - b) / 2.0
    q = math.hypot(e, h)
    r = math.hypot(f, g)
    sx = q + r
    sy = q - r
    a1 = math.atan2(g, f)
    a2 = math.atan2(h, e)
    theta = (a2 - a1) / 2.0
    phi = (a2 + a1) / 2.0
    # m == R(phi) @ diag(sx, sy) @ R(theta); sy carries the sign of det(m).
    u = np.array([[math.cos(phi), -math.sin(phi)], [math.sin(phi), math.cos(phi)]])
    v_t = np.array([[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]])
    return u, np.array([sx, sy]), v_t


def _svd3_jacobi(m: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # One-sided Jacobi: orthogonalize the columns of b = m @ v by plane
    # rotations; column norms become the singular values.
    b = m.astype(float).copy()
    v = np.eye(3)
    for _ in range(60):
        off = 0.0
        for p in range(2):
            for q in range(p + 1, 3):
                alpha = float(b[:, p] @ b[:, p])
                beta = float(b[:, q] @ b[:, q])
                gamma = float(b[:, p] @ b[:, q])
                if alpha * beta == 0.0 or abs(gamma) <= 1e-30:
                    continue
                off = max(off, abs(gamma) / math.sqrt(alpha * beta))
                zeta = (beta - alpha) / (2.0 * gamma)
                t = math.copysign(1.0, zeta) / (abs(zeta) + math.sqrt(1.0 + zeta * zeta))
                cs = 1.0 / math.sqrt(1.0 + t * t)
                sn = cs * t
                bp = b[:, p].copy()
                b[:, p] = cs * bp - sn * b[:, q]
                b[:, q] = sn * bp + cs * b[:, q]
                vp = v[:, p].copy()
                v[:, p] = cs * vp - sn * v[:, q]
                v[:, q] = sn * vp + cs * v[:, q]
        if off < 1e-15:
            break
    sigma = np.sqrt(np.sum(b * b, axis=0))
    u = np.zeros((3, 3))
    scale = sigma.max() if sigma.max() > 0 else 1.0
    for j in range(3):
        if sigma[j] > SVD_TOL * scale:
            u[:, j] = b[:, j] / sigma[j]
        else:
            # Null column: complete to an orthonormal basis.
            prev = [u[:, k] for k in range(j) if np.any(u[:, k])]
            if len(prev) == 2:
                u[:, j] = np.cross(prev[0], prev[1])
            else:
                cand = np.eye(3)[np.argmin(np.abs(b).sum(axis=1))]
                for w in prev:
                    cand = cand - (cand @ w) * w
                n = np.linalg.norm(cand)
                u[:, j] = cand / n if n > 0 else np.eye(3)[j]
    return u, sigma, v.T


def svd(m: np.ndarray | list) -> SVDecomposition:
    """Singular value decomposition with fixed sign conventions.

    sigma is non-increasing and non-negative.  det(u) == det(v_t) == +1
    when det(m) > 0; for det(m) < 0 the reflection is folded into u so that
    det(v_t) == +1 still holds.
    """
    m = check_matrix(m)
    if m.shape[0] == 2:
        u, sigma, v_t = _svd2(m)
    else:
        u, sigma, v_t = _svd3_jacobi(m)

    # Non-negative singular values: fold signs into u.
    for j in range(len(sigma)):
        if sigma[j] < 0:
            sigma[j] = -sigma[j]
            u[:, j] = -u[:, j]
    # Sort non-increasing (swap u columns / v_t rows in step).
    order = np.argsort(-sigma, kind="stable")
    sigma = sigma[order]
    u = u[:, order]
    v_t = v_t[order, :]
    # All reflection goes to u; v_t is always a rotation.
    if np.linalg.det(v_t) < 0:
        v_t[-1, :] = -v_t[-1, :]
        u[:, -1] = -u[:, -1]
    if np.linalg.det(m) > 0 and np.linalg.det(u) < 0:
        # Possible only through accumulated roundoff in the 3x3 path with a
        # (near-)degenerate sigma; flip the null direction.
        u[:, -1] = -u[:, -1]
        sigma = sigma.copy()

    scale = sigma[0] if sigma[0] > 0 else 1.0
    degenerate = bool(sigma[-1] <= SVD_TOL * scale)
    return SVDecomposition(u=u, sigma=sigma, v_t=v_t, degenerate=degenerate)


def singular_values(m: np.ndarray | list) -> np.ndarray:
    return svd(m).sigma


def operator_norm(m: np.ndarray | list) -> float:
    return float(svd(m).sigma[0])


def bilip_constant(a: AffineMapData | np.ndarray | list) -> float:
    """Minimal L with L^-1 |x-y| <= |f(x)-f(y)| <= L |x-y|: max(s_max, 1/s_min)."""
    m = a.matrix if isinstance(a, AffineMapData) else check_matrix(a)
    dec = svd(m)
    if dec.degenerate or dec.sigma[-1] == 0.0:
        raise GeometryError("not bi-Lipschitz: singular matrix")
    return float(max(dec.sigma[0], 1.0 / dec.sigma[-1]))


def linear_dilatation(m: np.ndarray | list) -> float:
    """H(S) = s_max / s_min.  Satisfies H(S) == H(S^-1)."""
    dec = svd(m)
    if dec.degenerate or dec.sigma[-1] == 0.0:
        raise GeometryError("linear dilatation undefined: singular matrix")
    return float(dec.sigma[0] / dec.sigma[-1])


def pseudo_distance(s: np.ndarray | list, t: np.ndarray | list) -> float:
    """D(S, T) = H(S^-1 T) >= 1, with equality iff S^-1 T is conformal."""
    s = check_matrix(s)
    t = check_matrix(t)
    if abs(np.linalg.det(s)) < SVD_TOL or abs(np.linalg.det(t)) < SVD_TOL:
        raise GeometryError("pseudo distance undefined: singular matrix")
    return linear_dilatation(np.linalg.solve(s, t))


@dataclass(frozen=True, slots=True)
class Cube:
    """Axis-parallel cube: center x(Q) and side length l(Q) > 0."""

    center: tuple[float, ...]
    side: float

    def __post_init__(self):
        c = tuple(float(v) for v in self.center)
        if len(c) not in (2, 3) or not all(math.isfinite(v) for v in c):
            raise GeometryError("cube center must be a finite 2- or 3-vector")
        if not (self.side > 0 and math.isfinite(self.side)):
            raise GeometryError("cube side must be positive and finite")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "side", float(self.side))

    @property
    def dim(self) -> int:
        return len(self.center)

    @property
    def diam(self) -> float:
        return self.side * math.sqrt(self.dim)

    def dilate(self, lam: float) -> Cube:
        return Cube(self.center, lam * self.side)

    def lo(self) -> np.ndarray:
        return np.asarray(self.center) - self.side / 2.0

    def hi(self) -> np.ndarray:
        return np.asarray(self.center) + self.side / 2.0

    def contains(self, pts: np.ndarray, tol: float = 0.0) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        return np.all((pts >= self.lo() - tol) & (pts <= self.hi() + tol), axis=1)

    def vertices(self) -> np.ndarray:
        h = self.side / 2.0
        c = np.asarray(self.center)
        corners = np.array(
            [[(1 if (i >> k) & 1 else -1) for k in range(self.dim)] for i in range(2**self.dim)],
            dtype=float,
        )
        return c + h * corners

    def overlaps(self, other: Cube, tol: float = 0.0) -> bool:
        """True when the interiors intersect."""
        return bool(np.all(self.lo() < other.hi() - tol) and np.all(other.lo() < self.hi() - tol))


def cube_lattice(cube: Cube, h: float) -> tuple[np.ndarray, float]:
    """Regular lattice spanning the cube at pitch <= h; returns (points, pitch)."""
    if not (h > 0):
        raise GeometryError("lattice pitch must be positive")
    n = max(2, int(math.ceil(cube.side / h - 1e-12)) + 1)
    axes = [np.linspace(cube.lo()[k], cube.hi()[k], n) for k in range(cube.dim)]
    grid = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([g.ravel() for g in grid], axis=-1)
    return pts, cube.side / (n - 1)


def box_lattice(lo: np.ndarray, hi: np.ndarray, h: float) -> np.ndarray:
    """Lattice over an axis box [lo, hi] at pitch <= h (at least 2 points/axis)."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    axes = []
    for k in range(lo.shape[0]):
        span = hi[k] - lo[k]
        n = max(2, int(math.ceil(span / h - 1e-12)) + 1)
        axes.append(np.linspace(lo[k], hi[k], n))
    grid = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in grid], axis=-1)


@dataclass(frozen=True, slots=True)
class DyadicCube:
    """[j 2^-k, (j+1) 2^-k] per axis; level k, integer corner coords j."""

    level: int
    coords: tuple[int, ...]

    def __post_init__(self):
        if self.level < 0:
            raise GeometryError("dyadic level must be non-negative")
        if len(self.coords) not in (2, 3):
            raise GeometryError("dyadic coords must be a 2- or 3-tuple")
        object.__setattr__(self, "coords", tuple(int(c) for c in self.coords))

    @property
    def dim(self) -> int:
        return len(self.coords)

    @property
    def side(self) -> float:
        return 2.0 ** (-self.level)

    @property
    def side_exact(self) -> Fraction:
        return Fraction(1, 2**self.level)

    @property
    def volume(self) -> Fraction:
        return Fraction(1, 2 ** (self.level * self.dim))

    def to_cube(self) -> Cube:
        s = self.side
        return Cube(tuple((c + 0.5) * s for c in self.coords), s)

    def lo_exact(self) -> tuple[Fraction, ...]:
        return tuple(Fraction(c, 2**self.level) for c in self.coords)

    def hi_exact(self) -> tuple[Fraction, ...]:
        return tuple(Fraction(c + 1, 2**self.level) for c in self.coords)

    def children(self) -> list[DyadicCube]:
        kids = []
        for i in range(2**self.dim):
            offs = tuple((i >> k) & 1 for k in range(self.dim))
            kids.append(
                DyadicCube(self.level + 1, tuple(2 * c + o for c, o in zip(self.coords, offs)))
            )
        return kids

    def parent(self) -> DyadicCube:
        if self.level == 0:
            raise GeometryError("level-0 cube has no parent")
        return DyadicCube(self.level - 1, tuple(c >> 1 for c in self.coords))

    def ancestor(self, levels: int) -> DyadicCube:
        if levels < 0:
            raise GeometryError("ancestor level count must be non-negative")
        if levels > self.level:
            raise GeometryError("ancestor request above level 0")
        return DyadicCube(self.level - levels, tuple(c >> levels for c in self.coords))

    def contains_dyadic(self, other: DyadicCube) -> bool:
        if other.level < self.level:
            return False
        return other.ancestor(other.level - self.level) == self


def dyadic_children(q: DyadicCube) -> list[DyadicCube]:
    return q.children()


def dyadic_ancestor(q: DyadicCube, levels: int) -> DyadicCube:
    return q.ancestor(levels)


def unit_cube_dyadics(dim: int, level: int) -> list[DyadicCube]:
    """All 2^(level*dim) dyadic cubes of [0,1]^dim at the given level."""
    rng = range(2**level)
    if dim == 2:
        return [DyadicCube(level, (i, j)) for i in rng for j in rng]
    return [DyadicCube(level, (i, j, k)) for i in rng for j in rng for k in rng]


def rotation_2d(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def rotation_3d(axis: np.ndarray, theta: float) -> np.ndarray:
    """Rodrigues rotation about a unit axis."""
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    k = np.array(
        [[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]]
    )
    return np.eye(3) + math.sin(theta) * k + (1 - math.cos(theta)) * (k @ k)
