#!/usr/bin/env python3
"""Tests for mfda.ensemble module."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mfda.ensemble import (
    AnomalyMatrix,
    Ensemble,
    GaussianSampler,
    anomalies,
    cholesky_factor,
    empirical_cov,
    empirical_mean,
    ensemble_covariance,
    inflate,
    inflate_ensemble,
    reassemble,
    sample_gaussian,
)
from mfda.errors import (
    EmptyEnsemble,
    IndefiniteCovariance,
    InsufficientMembers,
    InvalidInflation,
    ShapeMismatch,
)


class TestEnsemble:
    """Tests for the Ensemble container."""

    def test_shape(self) -> None:
        """Test dim and size read the matrix shape."""
        ens = Ensemble(np.zeros((5, 3)))
        assert ens.dim == 5
        assert ens.size == 3

    def test_rejects_vectors(self) -> None:
        """Test a 1-D input is not an ensemble."""
        with pytest.raises(ShapeMismatch):
            Ensemble(np.zeros(4))

    def test_head(self) -> None:
        """Test head keeps the leading members."""
        ens = Ensemble(np.arange(12.0).reshape(3, 4))
        np.testing.assert_array_equal(ens.head(2).members, ens.members[:, :2])


class TestStatistics:
    """Tests for means, anomalies and covariances."""

    def test_mean_of_empty_raises(self) -> None:
        """Test averaging an empty ensemble fails."""
        with pytest.raises(EmptyEnsemble):
            empirical_mean(Ensemble(np.zeros((3, 0))))

    def test_anomalies_need_two_members(self) -> None:
        """Test anomalies of a single member fail."""
        with pytest.raises(InsufficientMembers):
            anomalies(Ensemble(np.ones((3, 1))))

    def test_covariance_matches_numpy(self, rng: np.random.Generator) -> None:
        """Test A A^T equals the unbiased sample covariance."""
        members = rng.standard_normal((4, 9))
        np.testing.assert_allclose(
            ensemble_covariance(Ensemble(members)), np.cov(members), atol=1e-12
        )

    def test_cross_covariance_member_mismatch(self) -> None:
        """Test cross covariance needs equal member counts."""
        a = AnomalyMatrix(np.zeros((2, 3)))
        b = AnomalyMatrix(np.zeros((2, 4)))
        with pytest.raises(ShapeMismatch):
            empirical_cov(a, b)

    @settings(max_examples=30, deadline=None)
    @given(
        n=st.integers(min_value=1, max_value=6),
        count=st.integers(min_value=2, max_value=10),
        seed=st.integers(min_value=0, max_value=2**32 - 1),
    )
    def test_anomalies_sum_to_zero(self, n: int, count: int, seed: int) -> None:
        """Test anomalies are centered and reassemble to the original members."""
        members = np.random.default_rng(seed).standard_normal((n, count))
        ens = Ensemble(members)
        a = anomalies(ens)
        np.testing.assert_allclose(a.anomalies.sum(axis=1), 0.0, atol=1e-10)
        np.testing.assert_allclose(
            reassemble(empirical_mean(ens), a).members, members, atol=1e-10
        )


class TestInflation:
    """Tests for multiplicative inflation."""

    def test_rejects_deflation(self) -> None:
        """Test alpha below one raises."""
        with pytest.raises(InvalidInflation):
            inflate(AnomalyMatrix(np.ones((2, 2))), 0.9)

    def test_identity(self) -> None:
        """Test alpha of one returns the input."""
        a = AnomalyMatrix(np.ones((2, 2)))
        assert inflate(a, 1.0) is a

    def test_scales_covariance(self, rng: np.random.Generator) -> None:
        """Test inflation by alpha scales the covariance by alpha squared and keeps the mean."""
        ens = Ensemble(rng.standard_normal((3, 6)))
        inflated = inflate_ensemble(ens, 1.5)
        np.testing.assert_allclose(empirical_mean(inflated), empirical_mean(ens), atol=1e-12)
        np.testing.assert_allclose(
            ensemble_covariance(inflated), 2.25 * ensemble_covariance(ens), atol=1e-12
        )


class TestCholesky:
    """Tests for the jittered Cholesky factor."""

    def test_factor(self) -> None:
        """Test L L^T reproduces an SPD matrix."""
        cov = np.array([[4.0, 1.0], [1.0, 3.0]])
        L = cholesky_factor(cov)
        np.testing.assert_allclose(L @ L.T, cov)

    def test_semidefinite_gets_jitter(self) -> None:
        """Test a rank-deficient PSD matrix is factored after jitter."""
        v = np.array([[1.0], [1.0]])
        L = cholesky_factor(v @ v.T)
        np.testing.assert_allclose(L @ L.T, v @ v.T, atol=1e-8)

    def test_indefinite_raises(self) -> None:
        """Test an indefinite matrix raises after jitter."""
        with pytest.raises(IndefiniteCovariance):
            cholesky_factor(np.diag([1.0, -1.0]))


class TestGaussianSampler:
    """Tests for seeded Gaussian sampling."""

    def test_deterministic(self) -> None:
        """Test equal seeds give equal draws."""
        a = GaussianSampler.standard(3, seed=11).draw(5)
        b = GaussianSampler.standard(3, seed=11).draw(5)
        np.testing.assert_array_equal(a, b)

    def test_seeds_differ(self) -> None:
        """Test different seeds give different draws."""
        a = GaussianSampler.standard(3, seed=1).draw(5)
        b = GaussianSampler.standard(3, seed=2).draw(5)
        assert not np.array_equal(a, b)

    def test_substreams_independent_of_parent_use(self) -> None:
        """Test a substream does not depend on how much the parent has drawn."""
        fresh = GaussianSampler.standard(2, seed=5).substream(1).draw(4)
        used = GaussianSampler.standard(2, seed=5)
        used.draw(10)
        np.testing.assert_array_equal(used.substream(1).draw(4), fresh)

    def test_covariance(self) -> None:
        """Test draws have the requested covariance."""
        cov = np.array([[2.0, 0.6], [0.6, 1.0]])
        draws = GaussianSampler.from_covariance(cov, seed=3).draw(200_000)
        np.testing.assert_allclose(np.cov(draws), cov, atol=0.03)

    def test_state_roundtrip(self) -> None:
        """Test restoring a saved state replays the same draws, substreams included."""
        sampler = GaussianSampler.standard(2, seed=9)
        sampler.draw(3)
        sampler.substream(1).draw(2)
        state = sampler.get_state()
        expected = (sampler.draw(4), sampler.substream(1).draw(4))

        restored = GaussianSampler.standard(2, seed=9)
        restored.set_state(state)
        np.testing.assert_array_equal(restored.draw(4), expected[0])
        np.testing.assert_array_equal(restored.substream(1).draw(4), expected[1])

    def test_sample_gaussian_needs_members(self) -> None:
        """Test zero draws is rejected."""
        with pytest.raises(InsufficientMembers):
            sample_gaussian(GaussianSampler.standard(2, seed=0), 0)
