from __future__ import annotations

import math

import numpy as np
import pytest

from bilipfactor.factorization import (
    FactorCertificationError,
    Piecewise,
    check_factor_sequence,
    factor_diagonal,
    factor_linear_in_cube,
    factor_linear_outside_cube,
    factor_rotation,
    factor_shrink,
    factor_translation_along_path,
    glue_identity_outside,
    glue_two,
)
from bilipfactor.geometry_core import (
    AffineMapData,
    Cube,
    GeometryError,
    bilip_constant,
    cube_lattice,
    rotation_2d,
    rotation_3d,
    svd,
)
from bilipfactor.map_engine import (
    Affine,
    Blend,
    CertificationError,
    Identity,
    Translation,
    estimate_distortion,
    sup_distance,
)

from conftest import random_orientation_preserving


def oracle_rotation_steps(theta: float, alpha: float) -> int:
    """Scalar search: minimal N with 2 sin(theta / 2N) < alpha."""
    theta = abs(theta)
    if theta == 0:
        return 0
    n = 1
    while 2.0 * math.sin(theta / (2.0 * n)) >= alpha:
        n += 1
    return n


def oracle_diagonal_steps(l_bound: float, alpha: float) -> int:
    """Scalar search: minimal n with L^(1/n) < 1 + alpha."""
    n = 1
    while l_bound ** (1.0 / n) >= 1.0 + alpha:
        n += 1
    return n


class TestDiagonal:
    def test_identity_vector(self):
        assert factor_diagonal([1.0, 1.0], 0.3, 2.0).T == 0

    def test_example_counts(self):
        fs = factor_diagonal([2.0, 0.5], 0.1, 2.0)
        assert fs.T == 2 * oracle_diagonal_steps(2.0, 0.1) == 16
        steps = fs.meta["steps"]
        worst = max(np.abs(np.linalg.svd(m - np.eye(2), compute_uv=False)).max() for m in steps)
        assert worst == pytest.approx(2 ** (1 / 8) - 1, abs=1e-12)
        assert worst < 0.1

        fs2 = factor_diagonal([4.0, 1.0], 0.5, 4.0)
        assert fs2.T == 2 * oracle_diagonal_steps(4.0, 0.5) == 8

    def test_partial_products_within_band(self, rng):
        for _ in range(20):
            l_bound = rng.uniform(1.2, 4.0)
            sigma = np.exp(rng.uniform(-np.log(l_bound), np.log(l_bound), size=2))
            fs = factor_diagonal(sigma, 0.2, l_bound)
            partial = np.eye(2)
            for m in fs.meta["steps"]:
                partial = m @ partial
                diag = np.diag(partial)
                assert np.all(diag <= l_bound + 1e-12)
                assert np.all(diag >= 1.0 / l_bound - 1e-12)
            assert np.abs(partial - np.diag(sigma)).max() <= 1e-12

    def test_sigma_outside_band_rejected(self):
        with pytest.raises(GeometryError):
            factor_diagonal([3.0, 1.0], 0.1, 2.0)


class TestRotation:
    def test_identity(self):
        assert factor_rotation(np.eye(2), 0.2).T == 0

    def test_2d_quarter_turn(self):
        fs = factor_rotation(rotation_2d(math.pi / 2), 0.1)
        assert fs.T == oracle_rotation_steps(math.pi / 2, 0.1) == 16
        prod = np.eye(2)
        for m in fs.meta["steps"]:
            assert np.linalg.svd(m - np.eye(2), compute_uv=False).max() < 0.1
            prod = m @ prod
        assert np.abs(prod - rotation_2d(math.pi / 2)).max() <= 1e-10

    def test_3d_half_turn(self):
        r = rotation_3d([0.0, 0.0, 1.0], math.pi)
        fs = factor_rotation(r, 0.5)
        assert fs.T == oracle_rotation_steps(math.pi, 0.5) == 7
        prod = np.eye(3)
        for m in fs.meta["steps"]:
            prod = m @ prod
        assert np.abs(prod - r).max() <= 1e-10

    def test_random_3d_products(self, rng):
        for _ in range(20):
            axis = rng.normal(size=3)
            r = rotation_3d(axis / np.linalg.norm(axis), rng.uniform(-math.pi, math.pi))
            fs = factor_rotation(r, 0.3)
            prod = np.eye(3)
            for m in fs.meta["steps"]:
                assert np.linalg.svd(m - np.eye(3), compute_uv=False).max() < 0.3
                prod = m @ prod
            assert np.abs(prod - r).max() <= 1e-10

    def test_rejections(self):
        with pytest.raises(GeometryError, match="orthogonal"):
            factor_rotation(np.diag([2.0, 0.5]), 0.1)
        with pytest.raises(GeometryError, match="orientation"):
            factor_rotation(np.diag([1.0, -1.0]), 0.1)


class TestFactorLinearInCube:
    def test_identity(self):
        fs = factor_linear_in_cube(np.eye(2), Cube((0.0, 0.0), 2.0), 2.0, 0.25)
        assert fs.T == 0

    def test_diagonal_example(self):
        q = Cube((0.0, 0.0), 2.0)
        fs = factor_linear_in_cube(np.diag([2.0, 0.5]), q, 2.0, 0.25)
        rep = check_factor_sequence(fs, 0.25)
        assert rep["agreement_ok"] and rep["certificates_ok"] and rep["support_ok"]
        # Compose-and-compare oracle on the cube lattice.
        assert rep["agreement_sup"] <= 1e-9 * q.diam
        # Count decomposes as the diagonal chain (no rotations needed).
        alpha = fs.meta["alpha"]
        assert fs.T == 2 * oracle_diagonal_steps(2.0, alpha)

    def test_rotation_times_diagonal_count_formula(self):
        q = Cube((0.0, 0.0), 2.0)
        a = rotation_2d(math.pi / 2) @ np.diag([2.0, 1.0])
        fs = factor_linear_in_cube(a, q, 2.0, 0.25)
        alpha = fs.meta["alpha"]
        dec = svd(a)
        expected = (
            oracle_rotation_steps(math.atan2(dec.v_t[1, 0], dec.v_t[0, 0]), alpha)
            + 2 * oracle_diagonal_steps(bilip_constant(a), alpha)
            + oracle_rotation_steps(math.atan2(dec.u[1, 0], dec.u[0, 0]), alpha)
        )
        assert fs.T == expected
        rep = check_factor_sequence(fs, 0.25)
        assert rep["agreement_ok"] and rep["certificates_ok"] and rep["support_ok"]

    def test_3d_map(self, rng):
        a = random_orientation_preserving(rng, 3, 2.0)
        fs = factor_linear_in_cube(a, Cube((0.0, 0.0, 0.0), 1.0), 2.0, 0.3)
        rep = check_factor_sequence(fs, 0.3)
        assert rep["agreement_ok"] and rep["certificates_ok"] and rep["support_ok"]

    def test_orientation_reversing_rejected(self):
        with pytest.raises(GeometryError):
            factor_linear_in_cube(np.diag([1.0, -1.0]), Cube((0.0, 0.0), 1.0), 2.0, 0.25)

    def test_count_monotone_in_epsilon(self, rng):
        q = Cube((0.0, 0.0), 1.0)
        for _ in range(10):
            a = random_orientation_preserving(rng, 2, 2.5)
            t_coarse = factor_linear_in_cube(a, q, 2.0, 0.3).T
            t_fine = factor_linear_in_cube(a, q, 2.0, 0.15).T
            assert t_fine >= t_coarse


class TestFactorLinearOutside:
    def test_contracts(self):
        q = Cube((0.0, 0.0), 1.0)
        fs = factor_linear_outside_cube(np.diag([1.5, 0.8]), q, 2.0, 0.3)
        assert all(c.L_lo <= 1.3 + 1e-12 for c in fs.certificates)
        inner = fs.meta["identity_inside"]
        l_bound = bilip_constant(np.diag([1.5, 0.8]))
        assert inner.side >= q.side / (2.0 * l_bound * math.sqrt(2)) - 1e-12
        pts = inner.dilate(0.95).vertices()
        for f in fs.factors:
            assert np.abs(f.evaluate(pts) - pts).max() <= 1e-12


class TestShrink:
    def test_trivial(self):
        assert factor_shrink(Cube((0.0, 0.0), 1.0), 2.0, 1.0, 0.2).T == 0

    def test_halving(self):
        q = Cube((0.0, 0.0), 1.0)
        fs = factor_shrink(q, 2.0, 0.5, 0.2)
        rep = check_factor_sequence(fs, 0.2)
        assert rep["agreement_ok"] and rep["certificates_ok"] and rep["support_ok"]
        # Count formula: per-step scale >= 1/(1+cap).
        step = fs.meta["step_scale"]
        assert step >= 1.0 / (1.0 + 0.2)
        assert fs.T == fs.meta["steps"]
        # Vertex images are exact.
        comp = fs.composite()
        assert np.abs(comp.evaluate(q.vertices()) - 0.5 * q.vertices()).max() <= 1e-12

    def test_off_center_and_growth(self):
        q = Cube((2.0, -1.0), 0.2)
        fs = factor_shrink(q, 4.0, 3.0, 0.25)
        rep = check_factor_sequence(fs, 0.25)
        assert rep["agreement_ok"] and rep["certificates_ok"] and rep["support_ok"]
        comp = fs.composite()
        center = np.array(q.center)
        want = center + 3.0 * (q.vertices() - center)
        assert np.abs(comp.evaluate(q.vertices()) - want).max() <= 1e-11

    def test_support_budget_rejected(self):
        with pytest.raises(GeometryError):
            factor_shrink(Cube((0.0, 0.0), 1.0), 1.5, 2.0, 0.2)


class TestTranslationAlongPath:
    def test_empty_move(self):
        q = Cube((0.0, 0.0), 0.5)
        assert factor_translation_along_path(q, np.array([[0.0, 0.0]]), 0.2).T == 0

    def test_straight_path(self):
        q = Cube((0.0, 0.0), 0.5)
        fs = factor_translation_along_path(q, np.array([[0.0, 0.0], [3.0, 0.0]]), 0.2)
        rep = check_factor_sequence(fs, 0.2)
        assert rep["agreement_ok"] and rep["certificates_ok"]
        comp = fs.composite()
        assert np.abs(comp(np.array([0.0, 0.0])) - [3.0, 0.0]).max() <= 1e-12
        # Factors are the identity far from the path.
        far = np.array([[0.0, 5.0], [1.5, -4.0], [-3.0, 0.0], [6.0, 2.0]])
        for f in fs.factors:
            assert np.abs(f.evaluate(far) - far).max() == 0.0

    def test_l_shaped_path_support(self):
        q = Cube((0.0, 0.0), 0.5)
        path = np.array([[0.0, 0.0], [1.5, 0.0], [1.5, 1.0]])
        fs = factor_translation_along_path(q, path, 0.2)
        comp = fs.composite()
        assert np.abs(comp(np.array([0.0, 0.0])) - [1.5, 1.0]).max() <= 1e-12
        # Identity at lattice points at distance >= 2 diam(q) from the path.
        grid, _ = cube_lattice(Cube((0.75, 0.5), 6.0), 0.5)
        samples = np.vstack([np.linspace(p, q_, 20) for p, q_ in zip(path[:-1], path[1:])])
        dmin = np.min(np.linalg.norm(grid[:, None, :] - samples[None, :, :], axis=2), axis=1)
        far = grid[dmin >= 2.0 * q.diam + 1e-9]
        for f in fs.factors:
            assert np.abs(f.evaluate(far) - far).max() == 0.0

    def test_pure_translation_on_cube(self):
        q = Cube((1.0, 1.0), 0.25)
        path = np.array([[1.0, 1.0], [2.0, 1.5]])
        fs = factor_translation_along_path(q, path, 0.25)
        pts = q.dilate(0.999).vertices()
        comp = fs.composite()
        assert np.abs(comp.evaluate(pts) - (pts + np.array([1.0, 0.5]))).max() <= 1e-11


class TestGlue:
    def _rotation_blend_piece(self, center, theta):
        c = np.asarray(center)
        rot = rotation_2d(theta)
        return Blend(Affine(AffineMapData(rot, c - rot @ c)), Cube(tuple(c), 0.35), 2.0)

    def test_single_identity_piece(self):
        g, rep = glue_identity_outside([(Cube((0.0, 0.0), 1.0), Identity())], 0.25)
        pts = np.random.default_rng(0).uniform(-2, 2, size=(50, 2))
        assert np.abs(g.evaluate(pts) - pts).max() == 0.0

    def test_two_rotation_blends(self):
        p1 = self._rotation_blend_piece((0.0, 0.0), 0.35)
        p2 = self._rotation_blend_piece((2.0, 0.0), -0.3)
        g, rep = glue_identity_outside(
            [(Cube((0.0, 0.0), 1.0), p1), (Cube((2.0, 0.0), 1.0), p2)], 0.05
        )
        assert rep.glued.L_lo <= max(rep.piece_bounds) ** 2 + 1e-6

    def test_boundary_violation_rejected(self):
        bad = Translation((0.2, 0.0))
        with pytest.raises(GeometryError, match="identity on boundary"):
            glue_identity_outside([(Cube((0.0, 0.0), 1.0), bad)], 0.25)

    def test_overlap_rejected(self):
        with pytest.raises(GeometryError, match="overlapping"):
            glue_identity_outside(
                [(Cube((0.0, 0.0), 1.0), Identity()), (Cube((0.5, 0.0), 1.0), Identity())], 0.25
            )

    def test_glue_two_matching_shear(self):
        shear = AffineMapData(np.array([[1.0, 0.3], [0.0, 1.0]]), np.zeros(2))
        f = Affine(shear)
        left = Cube((-0.5, 0.0), 1.0)
        right = Cube((0.5, 0.0), 1.0)
        g, rep = glue_two(left, f, right, f, 0.2)
        gen = np.random.default_rng(1)
        pts = np.stack([gen.uniform(-0.9, 0.9, 100), gen.uniform(-0.45, 0.45, 100)], axis=-1)
        assert np.abs(g.evaluate(pts) - shear.apply(pts)).max() <= 1e-12
        assert rep.glued.L_lo <= rep.bound + 1e-9

    def test_glue_two_mismatch_rejected(self):
        left = Cube((-0.5, 0.0), 1.2)
        right = Cube((0.5, 0.0), 1.2)
        with pytest.raises(GeometryError, match="disagree"):
            glue_two(left, Identity(), right, Translation((0.1, 0.0)), 0.2)


class TestPiecewise:
    def test_dispatch(self):
        pw = Piecewise(((Cube((0.0, 0.0), 1.0), Translation((0.0, 0.0))),))
        pts = np.array([[0.1, 0.1], [3.0, 3.0]])
        assert np.abs(pw.evaluate(pts) - pts).max() == 0.0
