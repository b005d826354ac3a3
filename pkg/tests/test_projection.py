#!/usr/bin/env python3
"""Tests for mfda.projection module."""

from pathlib import Path

import numpy as np
import pytest
import scipy.sparse as sp

from mfda.errors import BasisDegenerate, ShapeMismatch, SingularControlCovariance
from mfda.projection import ProjectionPair, fixed_gain, optimal_gain_correction


def _weighted_pair(rng: np.random.Generator, n: int = 8, r: int = 3) -> ProjectionPair:
    weights = 0.5 + rng.random(n)
    return ProjectionPair.build(
        rng.standard_normal((n, r)), m_factor=sp.csr_array(sp.diags_array(np.sqrt(weights)))
    )


class TestProjectionPair:
    """Tests for building biorthogonal pairs."""

    def test_biorthogonal_after_build(self, rng: np.random.Generator) -> None:
        """Test a non-orthogonal basis is re-orthogonalized in the M inner product."""
        pair = _weighted_pair(rng)
        assert pair.biorthogonality_error() <= 1e-10
        np.testing.assert_allclose(pair.phi_star @ pair.phi, np.eye(3), atol=1e-10)

    def test_restrict_lift_identity(self, rng: np.random.Generator) -> None:
        """Test Phi* Phi u = u."""
        pair = _weighted_pair(rng)
        u = rng.standard_normal((3, 5))
        np.testing.assert_allclose(pair.restrict(pair.lift(u)), u, atol=1e-10)

    def test_projector_idempotent(self, rng: np.random.Generator) -> None:
        """Test the projector is idempotent and its complement is M-orthogonal."""
        pair = _weighted_pair(rng)
        P = pair.projector()
        np.testing.assert_allclose(P @ P, P, atol=1e-10)
        x = rng.standard_normal(8)
        residual = pair.complement(x)
        for k in range(pair.r):
            assert pair.inner(residual, pair.phi[:, k]) == pytest.approx(0.0, abs=1e-10)

    def test_dense_inner_product(self, rng: np.random.Generator) -> None:
        """Test a dense M is factored for the caller."""
        root = rng.standard_normal((5, 5))
        pair = ProjectionPair.build(rng.standard_normal((5, 2)), m_inner=root @ root.T + np.eye(5))
        assert pair.biorthogonality_error() <= 1e-10

    def test_degenerate_basis(self) -> None:
        """Test linearly dependent columns cannot be made biorthogonal."""
        phi = np.ones((4, 2))
        with pytest.raises(BasisDegenerate):
            ProjectionPair.build(phi)

    def test_factor_shape_mismatch(self) -> None:
        """Test a factor acting on the wrong dimension raises."""
        with pytest.raises(ShapeMismatch):
            ProjectionPair.build(np.eye(4, 2), m_factor=np.eye(3))

    def test_lift_shape_mismatch(self) -> None:
        """Test lift checks the reduced dimension."""
        pair = ProjectionPair.build(np.eye(4, 2))
        with pytest.raises(ShapeMismatch):
            pair.lift(np.ones(3))

    def test_empty(self) -> None:
        """Test the zero-dimensional pair lifts to zeros."""
        pair = ProjectionPair.empty(4)
        assert pair.r == 0
        np.testing.assert_array_equal(pair.lift(np.zeros((0, 3))), np.zeros((4, 3)))
        assert pair.restrict(np.ones(4)).shape == (0,)

    def test_identity_truncation_compose(self, rng: np.random.Generator) -> None:
        """Test composing with a truncation keeps the leading columns."""
        pair = _weighted_pair(rng)
        nested = pair.compose(ProjectionPair.identity_truncation(3, 2))
        np.testing.assert_allclose(nested.phi, pair.phi[:, :2])
        assert nested.biorthogonality_error() <= 1e-10

    def test_identity_truncation_bounds(self) -> None:
        """Test truncating to more coordinates raises."""
        with pytest.raises(ShapeMismatch):
            ProjectionPair.identity_truncation(2, 3)

    def test_save_load(self, rng: np.random.Generator, temp_dir: Path) -> None:
        """Test a pair with a sparse factor survives the npz container."""
        pair = _weighted_pair(rng)
        path = temp_dir / "pair.npz"
        pair.save(path)
        loaded = ProjectionPair.load(path)
        np.testing.assert_array_equal(loaded.phi, pair.phi)
        np.testing.assert_array_equal(loaded.phi_star, pair.phi_star)
        x = rng.standard_normal(8)
        assert loaded.inner(x, x) == pytest.approx(pair.inner(x, x))


class TestGains:
    """Tests for projection-based gains."""

    def test_fixed_gain(self) -> None:
        """Test S = Phi and S = Phi / 2."""
        pair = ProjectionPair.build(np.eye(4, 2))
        np.testing.assert_array_equal(fixed_gain(pair).S, pair.phi)
        np.testing.assert_array_equal(fixed_gain(pair, halved=True).S, 0.5 * pair.phi)

    def test_correction_zero_cross(self) -> None:
        """Test no complement correlation leaves S = Phi."""
        pair = ProjectionPair.build(np.eye(4, 2))
        gain = optimal_gain_correction(np.zeros((4, 2)), np.eye(2), pair)
        np.testing.assert_allclose(gain.S, pair.phi)

    def test_correction_singular(self) -> None:
        """Test a singular control covariance raises."""
        pair = ProjectionPair.build(np.eye(4, 2))
        with pytest.raises(SingularControlCovariance):
            optimal_gain_correction(np.ones((4, 2)), np.zeros((2, 2)), pair)
