#!/usr/bin/env python3
"""Tests for mfda.mfenkf module."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mfda.enkf import ObservationModel, enkf_analysis, kalman_gain
from mfda.ensemble import (
    Array,
    Ensemble,
    GaussianSampler,
    anomalies,
    empirical_cov,
    empirical_mean,
    ensemble_covariance,
)
from mfda.errors import ModelBlowUp, ShapeMismatch
from mfda.mfenkf import (
    FidelityLadder,
    FidelityLevel,
    LadderEnsembles,
    NoiseMethod,
    Recentering,
    TotalVariateTriple,
    covariance_hierarchy,
    indirect_observation,
    mf_analysis,
    mf_forecast,
    mf_gain,
    noise_covariance_factor,
    perturb_observations,
    principal_covariance,
    propagate,
    telescopic_analysis,
    telescopic_forecast,
    telescopic_mean,
    total_variate_ensemble,
    total_variate_mean,
)
from mfda.projection import ProjectionPair


def _members(rng: np.random.Generator, n: int, count: int, shift: float = 0.0) -> Ensemble:
    return Ensemble(shift + rng.standard_normal((n, count)))


def _triple(
    rng: np.random.Generator, proj: ProjectionPair, n_x: int = 6, n_u: int = 10
) -> TotalVariateTriple:
    principal = _members(rng, proj.n, n_x)
    ancillary = Ensemble(proj.restrict(_members(rng, proj.n, n_u).members))
    return TotalVariateTriple.from_principal(principal, ancillary, proj)


def _identity(x: Array) -> Array:
    return x


class TestTotalVariateTriple:
    """Tests for the triple container."""

    def test_control_pairs_with_principal(self, rng: np.random.Generator) -> None:
        """Test a control with a different member count is rejected."""
        proj = ProjectionPair.build(np.eye(6, 2))
        with pytest.raises(ShapeMismatch):
            TotalVariateTriple(
                _members(rng, 6, 4), _members(rng, 2, 3), _members(rng, 2, 8), proj
            )

    def test_reduced_dims(self, rng: np.random.Generator) -> None:
        """Test reduced ensembles must live in the projection's space."""
        proj = ProjectionPair.build(np.eye(6, 2))
        with pytest.raises(ShapeMismatch):
            TotalVariateTriple(
                _members(rng, 6, 4), _members(rng, 2, 4), _members(rng, 3, 8), proj
            )

    def test_total_variate_mean(self, rng: np.random.Generator) -> None:
        """Test Mean(X) - 1/2 Phi (Mean(Uhat) - Mean(U))."""
        proj = ProjectionPair.build(np.eye(6, 2))
        triple = _triple(rng, proj)
        expected = empirical_mean(triple.principal) - 0.5 * proj.lift(
            empirical_mean(triple.control) - empirical_mean(triple.ancillary)
        )
        np.testing.assert_allclose(total_variate_mean(triple), expected)

    def test_total_variate_ensemble(self, rng: np.random.Generator) -> None:
        """Test member-wise total variates use the first N_x ancillary members."""
        proj = ProjectionPair.build(np.eye(6, 2))
        triple = _triple(rng, proj, n_x=4, n_u=6)
        z = total_variate_ensemble(triple)
        diff = triple.control.members - triple.ancillary.members[:, :4]
        np.testing.assert_allclose(z.members, triple.principal.members - 0.5 * proj.lift(diff))


class TestNoise:
    """Tests for correlated perturbation schemes."""

    def test_method_i_factor(self) -> None:
        """Test method (i) reproduces R exactly."""
        assert noise_covariance_factor(NoiseMethod.method_i()) == 1.0

    def test_method_i_single_level(self) -> None:
        """Test method (i) refuses deeper ladders."""
        with pytest.raises(ValueError):
            noise_covariance_factor(NoiseMethod.method_i(), levels=2)

    @given(s=st.floats(min_value=0.05, max_value=3.0))
    def test_method_ii_one_level(self, s: float) -> None:
        """Test 1 - s + s^2 / 2 for two fidelities."""
        factor = noise_covariance_factor(NoiseMethod.method_ii(s))
        assert factor == pytest.approx(1.0 - s + s**2 / 2.0)

    @pytest.mark.parametrize("levels", [1, 2, 3, 4])
    def test_method_ii_unit_scale(self, levels: int) -> None:
        """Test (1 + 2^(1 - 2L)) / 3 for s = 1."""
        factor = noise_covariance_factor(NoiseMethod.method_ii(1.0), levels)
        assert factor == pytest.approx((1.0 + 2.0 ** (1 - 2 * levels)) / 3.0)

    def test_scale_must_be_positive(self) -> None:
        """Test s <= 0 is rejected."""
        with pytest.raises(ValueError):
            NoiseMethod.method_ii(0.0)

    def test_method_i_streams(self) -> None:
        """Test the control reuses the principal draw and the ancillary is inflated."""
        sampler = GaussianSampler(seed=3, factor=np.eye(2))
        eta = perturb_observations(NoiseMethod.method_i(), np.eye(2), sampler, 4, 6)
        np.testing.assert_array_equal(eta.controls[0], eta.principal)
        expected = np.sqrt(3.0) * GaussianSampler(seed=3, factor=np.eye(2)).substream(1).draw(6)
        np.testing.assert_allclose(eta.ancillaries[0], expected)

    def test_method_ii_total_covariance(self) -> None:
        """Test the empirical total-variate noise covariance matches the factor."""
        sampler = GaussianSampler(seed=8, factor=np.eye(2))
        method = NoiseMethod.method_ii(1.0)
        eta = perturb_observations(method, np.eye(2), sampler, 100_000, 100_000)
        cov = np.cov(eta.total_variate())
        np.testing.assert_allclose(cov, noise_covariance_factor(method) * np.eye(2), atol=0.02)


class TestForecast:
    """Tests for ensemble propagation."""

    def test_propagate_parallel_matches_serial(self, rng: np.random.Generator) -> None:
        """Test thread-parallel propagation gives the serial result."""
        A = rng.standard_normal((4, 4))
        ens = _members(rng, 4, 6)
        serial = propagate(ens, lambda x: A @ x)
        threaded = propagate(ens, lambda x: A @ x, n_jobs=2)
        np.testing.assert_array_equal(serial.members, threaded.members)

    def test_blowup_names_member(self) -> None:
        """Test a non-finite member is reported by index."""

        def unstable(x: Array) -> Array:
            return np.full_like(x, np.nan) if x[0] == 0.0 else x

        ens = Ensemble(np.array([[1.0, 0.0, 2.0]]))
        with pytest.raises(ModelBlowUp) as info:
            propagate(ens, unstable)
        assert info.value.member == 1

    def test_mf_forecast_resets_control(self, rng: np.random.Generator) -> None:
        """Test the control is propagated from the projected principal."""
        proj = ProjectionPair.build(np.eye(6, 2))
        triple = _triple(rng, proj)
        triple = TotalVariateTriple(
            triple.principal, Ensemble(np.zeros((2, 6))), triple.ancillary, proj
        )
        A = 0.5 * np.eye(6)
        B = 2.0 * np.eye(2)
        forecast = mf_forecast(triple, lambda x: A @ x, lambda u: B @ u)
        np.testing.assert_allclose(forecast.principal.members, A @ triple.principal.members)
        np.testing.assert_allclose(
            forecast.control.members, B @ proj.restrict(triple.principal.members)
        )
        np.testing.assert_allclose(forecast.ancillary.members, B @ triple.ancillary.members)


class TestGain:
    """Tests for indirect observations and the total-variate gain."""

    def test_indirect_observation_lifts(
        self, rng: np.random.Generator, toy_obs: ObservationModel
    ) -> None:
        """Test reduced ensembles are observed through H(Phi u)."""
        proj = ProjectionPair.build(np.eye(6, 2))
        triple = _triple(rng, proj)
        evals = indirect_observation(triple, toy_obs)
        np.testing.assert_allclose(
            evals.ancillary.members, toy_obs.apply(proj.lift(triple.ancillary.members))
        )
        expected = empirical_mean(evals.principal) - 0.5 * (
            empirical_mean(evals.control) - empirical_mean(evals.ancillary)
        )
        np.testing.assert_allclose(evals.mean(), expected)

    def test_reduced_operator_size(
        self, rng: np.random.Generator, toy_obs: ObservationModel
    ) -> None:
        """Test a reduced operator must observe as many values as the full one."""
        proj = ProjectionPair.build(np.eye(6, 2))
        with pytest.raises(ShapeMismatch):
            indirect_observation(
                _triple(rng, proj), toy_obs, ObservationModel.gather([0], 2, np.eye(1))
            )

    def test_empty_control_space_gain(
        self, rng: np.random.Generator, toy_obs: ObservationModel
    ) -> None:
        """Test r = 0 gives the principal-ensemble Kalman gain."""
        proj = ProjectionPair.empty(6)
        principal = _members(rng, 6, 5)
        triple = TotalVariateTriple.from_principal(principal, Ensemble(np.zeros((0, 7))), proj)
        gain = mf_gain(triple, indirect_observation(triple, toy_obs), toy_obs.cov_obs)
        a_x = anomalies(principal)
        a_hx = anomalies(Ensemble(toy_obs.apply(principal.members)))
        expected = kalman_gain(
            empirical_cov(a_x, a_hx), empirical_cov(a_hx, a_hx), toy_obs.cov_obs
        )
        np.testing.assert_allclose(gain, expected, atol=1e-12)

    def test_gain_shape(self, rng: np.random.Generator, toy_obs: ObservationModel) -> None:
        """Test the gain maps observation space to the full state."""
        proj = ProjectionPair.build(np.eye(6, 2))
        triple = _triple(rng, proj)
        gain = mf_gain(triple, indirect_observation(triple, toy_obs), 0.5 * toy_obs.cov_obs)
        assert gain.shape == (6, 3)
        assert np.all(np.isfinite(gain))

    def test_principal_covariance(self, rng: np.random.Generator) -> None:
        """Test the upper bound is the principal ensemble covariance."""
        triple = _triple(rng, ProjectionPair.build(np.eye(6, 2)))
        np.testing.assert_array_equal(
            principal_covariance(triple), ensemble_covariance(triple.principal)
        )


class TestAnalysis:
    """Tests for the two-fidelity analysis."""

    def test_empty_control_space_is_enkf(
        self, rng: np.random.Generator, toy_obs: ObservationModel
    ) -> None:
        """Test r = 0 reproduces the EnKF bit for bit."""
        proj = ProjectionPair.empty(6)
        principal = _members(rng, 6, 5, shift=1.0)
        triple = TotalVariateTriple.from_principal(principal, Ensemble(np.zeros((0, 7))), proj)
        y = np.array([0.3, 1.1, -0.4])

        mf = mf_analysis(
            triple,
            toy_obs,
            y,
            NoiseMethod.method_i(),
            GaussianSampler(seed=21, factor=np.eye(3)),
            inflations=(1.2, 1.05),
        )
        enkf = enkf_analysis(
            principal, toy_obs, y, GaussianSampler(seed=21, factor=np.eye(3)), alpha=1.2
        )
        np.testing.assert_array_equal(mf.principal.members, enkf.members)
        np.testing.assert_array_equal(total_variate_mean(mf), empirical_mean(enkf))

    @pytest.mark.parametrize("method", [NoiseMethod.method_i(), NoiseMethod.method_ii(1.0)])
    def test_total_recentering(
        self, rng: np.random.Generator, toy_obs: ObservationModel, method: NoiseMethod
    ) -> None:
        """Test every mean sits on the analysis total variate after total recentering."""
        proj = ProjectionPair.build(np.eye(6, 2))
        post = mf_analysis(
            _triple(rng, proj),
            toy_obs,
            np.zeros(3),
            method,
            GaussianSampler(seed=5, factor=np.eye(3)),
        )
        principal_mean = empirical_mean(post.principal)
        np.testing.assert_allclose(post.control.members, proj.restrict(post.principal.members))
        np.testing.assert_allclose(
            empirical_mean(post.ancillary), proj.restrict(principal_mean), atol=1e-10
        )
        np.testing.assert_allclose(total_variate_mean(post), principal_mean, atol=1e-10)

    def test_control_recentering(
        self, rng: np.random.Generator, toy_obs: ObservationModel
    ) -> None:
        """Test control recentering moves the control mean onto the ancillary mean."""
        proj = ProjectionPair.build(np.eye(6, 2))
        post = mf_analysis(
            _triple(rng, proj),
            toy_obs,
            np.zeros(3),
            NoiseMethod.method_i(),
            GaussianSampler(seed=5, factor=np.eye(3)),
            recentering=Recentering.CONTROL,
        )
        np.testing.assert_allclose(
            empirical_mean(post.control), empirical_mean(post.ancillary), atol=1e-10
        )

    def test_deterministic(self, toy_obs: ObservationModel) -> None:
        """Test equal seeds give bit-identical analyses."""
        proj = ProjectionPair.build(np.eye(6, 2))

        def once() -> TotalVariateTriple:
            triple = _triple(np.random.default_rng(4), proj)
            return mf_analysis(
                triple,
                toy_obs,
                np.ones(3),
                NoiseMethod.method_i(),
                GaussianSampler(seed=9, factor=np.eye(3)),
                inflations=(1.1, 1.1),
            )

        a, b = once(), once()
        np.testing.assert_array_equal(a.principal.members, b.principal.members)
        np.testing.assert_array_equal(a.ancillary.members, b.ancillary.members)


class TestCovarianceHierarchy:
    """Tests for the analytic linear-Gaussian covariances."""

    def test_ordering(self, gaussian_prior: tuple[Array, Array], toy_obs: ObservationModel) -> None:
        """Test the optimal gains beat the suboptimal principal update and the prior."""
        _, P = gaussian_prior
        proj = ProjectionPair.build(np.eye(6, 3))
        H = toy_obs.linear_h.toarray()
        h = covariance_hierarchy(P, proj, H, toy_obs.cov_obs)
        assert np.trace(h.principal_optimal) <= np.trace(h.principal_suboptimal) + 1e-10
        assert np.trace(h.total_optimal) <= np.trace(h.total_prior) + 1e-10
        assert np.trace(h.total_prior) <= np.trace(P) + 1e-10


REPLICATES = 2000


@pytest.fixture(scope="module")
def replicate_errors() -> tuple[Array, Array]:
    """Analysis mean errors of paired MFEnKF (5 + 50 members) and 5-member EnKF runs.

    The prior is centered on the truth and the control space spans its two leading
    eigenvectors; each replicate draws fresh ensembles and a fresh observation.
    """
    rng = np.random.default_rng(20240612)
    eigenvectors, _ = np.linalg.qr(rng.standard_normal((6, 6)))
    root = eigenvectors * np.sqrt([4.0, 2.0, 0.2, 0.1, 0.1, 0.05])
    truth = rng.standard_normal(6)
    proj = ProjectionPair.build(eigenvectors[:, :2])
    obs = ObservationModel.gather([0, 2, 4], 6, np.eye(3))

    mf_errors, enkf_errors = [], []
    for k in range(REPLICATES):
        principal = Ensemble(truth[:, None] + root @ rng.standard_normal((6, 5)))
        ancillary = Ensemble(proj.restrict(truth[:, None] + root @ rng.standard_normal((6, 50))))
        y = truth[[0, 2, 4]] + rng.standard_normal(3)
        post = mf_analysis(
            TotalVariateTriple.from_principal(principal, ancillary, proj),
            obs,
            y,
            NoiseMethod.method_i(),
            GaussianSampler(seed=k, factor=np.eye(3)),
        )
        plain = enkf_analysis(principal, obs, y, GaussianSampler(seed=k, factor=np.eye(3)))
        mf_errors.append(total_variate_mean(post) - truth)
        enkf_errors.append(empirical_mean(plain) - truth)
    return np.array(mf_errors), np.array(enkf_errors)


@pytest.mark.slow
class TestReplicateAnalyses:
    """Monte Carlo checks of the total-variate analysis mean on a linear-Gaussian toy."""

    def test_unbiased(self, replicate_errors: tuple[Array, Array]) -> None:
        """Test every component's mean error is within four standard errors of zero."""
        mf_errors, _ = replicate_errors
        bias = mf_errors.mean(axis=0)
        stderr = mf_errors.std(axis=0, ddof=1) / np.sqrt(REPLICATES)
        assert np.all(np.abs(bias) <= 4.0 * stderr)

    def test_variance_below_enkf(self, replicate_errors: tuple[Array, Array]) -> None:
        """Test the MFEnKF mean spreads less than the EnKF mean at one-sided 95%."""
        mf_errors, enkf_errors = replicate_errors
        diff = np.sum(mf_errors**2, axis=1) - np.sum(enkf_errors**2, axis=1)
        upper = diff.mean() + 1.645 * diff.std(ddof=1) / np.sqrt(REPLICATES)
        assert upper < 0.0


class TestTelescopic:
    """Tests for the multi-level ladder."""

    def _ladder(self) -> FidelityLadder:
        return FidelityLadder(
            (
                FidelityLevel(ProjectionPair.build(np.eye(6, 3)), _identity, 8),
                FidelityLevel(ProjectionPair.identity_truncation(3, 1), _identity, 10),
            )
        )

    def _ensembles(self, rng: np.random.Generator, ladder: FidelityLadder) -> LadderEnsembles:
        principal = _members(rng, 6, 5)
        ancillary_1 = _members(rng, 3, 8)
        return LadderEnsembles(
            principal,
            (
                Ensemble(ladder.pairs[0].restrict(principal.members)),
                Ensemble(ladder.pairs[1].restrict(ancillary_1.members)),
            ),
            (ancillary_1, _members(rng, 1, 10)),
        )

    def test_dimensions_must_decrease(self) -> None:
        """Test a non-nested ladder is rejected."""
        with pytest.raises(ShapeMismatch):
            FidelityLadder(
                (
                    FidelityLevel(ProjectionPair.build(np.eye(6, 3)), _identity, 8),
                    FidelityLevel(ProjectionPair.build(np.eye(4, 2)), _identity, 8),
                )
            )

    def test_one_level_matches_two_fidelity(
        self, rng: np.random.Generator, toy_obs: ObservationModel
    ) -> None:
        """Test a one-level telescopic analysis is the two-fidelity analysis."""
        proj = ProjectionPair.build(np.eye(6, 2))
        triple = _triple(rng, proj)
        ladder = FidelityLadder((FidelityLevel(proj, _identity, triple.ancillary.size),))
        method = NoiseMethod.method_ii(1.0)
        two = mf_analysis(
            triple, toy_obs, np.ones(3), method, GaussianSampler(seed=2, factor=np.eye(3))
        )
        tele = telescopic_analysis(
            ladder,
            LadderEnsembles.from_triple(triple),
            toy_obs,
            np.ones(3),
            GaussianSampler(seed=2, factor=np.eye(3)),
            method,
        )
        np.testing.assert_array_equal(tele.principal.members, two.principal.members)
        np.testing.assert_array_equal(tele.ancillaries[0].members, two.ancillary.members)

    def test_two_levels(self, rng: np.random.Generator, toy_obs: ObservationModel) -> None:
        """Test level-2 controls follow the level-1 ancillary and means stay consistent."""
        ladder = self._ladder()
        post = telescopic_analysis(
            ladder,
            self._ensembles(rng, ladder),
            toy_obs,
            np.zeros(3),
            GaussianSampler(seed=6, factor=np.eye(3)),
        )
        np.testing.assert_allclose(
            post.controls[1].members, ladder.pairs[1].restrict(post.ancillaries[0].members)
        )
        principal_mean = empirical_mean(post.principal)
        np.testing.assert_allclose(telescopic_mean(ladder, post), principal_mean, atol=1e-10)
        np.testing.assert_allclose(
            empirical_mean(post.ancillaries[1]),
            ladder.accumulated[1].restrict(principal_mean),
            atol=1e-10,
        )

    def test_forecast_shapes(self, rng: np.random.Generator) -> None:
        """Test the forecast keeps every ensemble's shape."""
        ladder = self._ladder()
        ens = self._ensembles(rng, ladder)
        forecast = telescopic_forecast(ladder, ens, _identity)
        assert [c.members.shape for c in forecast.controls] == [(3, 5), (1, 8)]
        assert [a.members.shape for a in forecast.ancillaries] == [(3, 8), (1, 10)]

    def test_depth_mismatch(self, rng: np.random.Generator) -> None:
        """Test a ladder and ensembles of different depth are rejected."""
        ladder = self._ladder()
        proj = ProjectionPair.build(np.eye(6, 3))
        with pytest.raises(ShapeMismatch):
            telescopic_mean(ladder, LadderEnsembles.from_triple(_triple(rng, proj)))


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(min_value=0, max_value=2**32 - 1), n_u=st.integers(2, 12))
def test_analysis_is_finite(seed: int, n_u: int) -> None:
    """Property: analyses of well-posed random triples stay finite and keep their sizes."""
    rng = np.random.default_rng(seed)
    proj = ProjectionPair.build(np.eye(5, 2))
    obs = ObservationModel.gather([0, 3], 5, np.eye(2))
    post = mf_analysis(
        _triple(rng, proj, n_x=4, n_u=n_u),
        obs,
        rng.standard_normal(2),
        NoiseMethod.method_i(),
        GaussianSampler(seed=seed, factor=np.eye(2)),
    )
    assert post.ancillary.size == n_u
    assert np.all(np.isfinite(post.principal.members))
