from __future__ import annotations

import numpy as np
import pytest

from bilipfactor.geometry_core import AffineMapData, Cube, rotation_2d, rotation_3d
from bilipfactor.map_engine import Affine, Blend, Compose, LogSpiral, MapExpr, Scaling, Translation


@pytest.fixture
def rng():
    return np.random.default_rng(20260810)


def random_rotation(rng: np.random.Generator, d: int) -> np.ndarray:
    if d == 2:
        return rotation_2d(rng.uniform(-np.pi, np.pi))
    axis = rng.normal(size=3)
    return rotation_3d(axis / np.linalg.norm(axis), rng.uniform(-np.pi, np.pi))


def random_orientation_preserving(rng: np.random.Generator, d: int, l_max: float) -> np.ndarray:
    """Random linear map with singular values in [1/l_max, l_max] (so L <= l_max)."""
    sigma = np.exp(rng.uniform(-np.log(l_max), np.log(l_max), size=d))
    return random_rotation(rng, d) @ np.diag(sigma) @ random_rotation(rng, d)


def small_rotation_blend(center, theta: float, side: float = 0.3, lam: float = 2.0) -> MapExpr:
    c = np.asarray(center, dtype=float)
    rot = rotation_2d(theta)
    inner = Affine(AffineMapData(rot, c - rot @ c))
    return Blend(inner, Cube(tuple(c), side), lam)


def smooth_test_maps() -> list[MapExpr]:
    """20 smooth planar maps evaluable on the unit square (and its 2Q windows)."""
    maps: list[MapExpr] = []
    gen = np.random.default_rng(424242)
    for _ in range(6):
        mat = random_orientation_preserving(gen, 2, 1.6)
        maps.append(Affine(AffineMapData(mat, gen.uniform(-0.3, 0.3, size=2))))
    for k in (0.01, 0.02, 0.03):
        maps.append(LogSpiral(k))
    for theta in (0.002, 0.003, 0.005):
        maps.append(small_rotation_blend((0.5, 0.5), theta, side=0.4))
    for k, theta in ((0.015, 0.005), (0.02, -0.005)):
        maps.append(
            Compose((small_rotation_blend((0.4, 0.6), theta, side=0.3), LogSpiral(k)))
        )
    for a in (0.9, 1.1, 1.25):
        maps.append(Compose((Scaling(a), Translation((0.05, -0.02)))))
    maps.append(Compose((Translation((0.2, 0.1)), Affine(AffineMapData(rotation_2d(0.1), np.zeros(2))))))
    maps.append(Compose((LogSpiral(0.01), Scaling(1.05))))
    maps.append(Translation((0.07, 0.03)))
    assert len(maps) == 20
    return maps
