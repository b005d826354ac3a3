#!/usr/bin/env python3
"""Perturbed-observations EnKF and the localized, shrinkage and corrected-MLEnKF baselines."""

import dataclasses
import logging
from collections.abc import Callable
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from numpy.typing import ArrayLike
from scipy.spatial.distance import cdist

from mfda.control_variates import signed_measure_cov
from mfda.ensemble import (
    AnomalyMatrix,
    Array,
    Ensemble,
    GaussianSampler,
    anomalies,
    cholesky_factor,
    empirical_cov,
    empirical_mean,
    inflate_ensemble,
    reassemble,
)
from mfda.errors import (
    DivergedAnalysis,
    IndefiniteCovariance,
    IndexOutOfRange,
    LinearAlgebraError,
    NoGeometry,
    ShapeMismatch,
    SingularInnovation,
)

if TYPE_CHECKING:
    from mfda.mfenkf import TotalVariateTriple

logger = logging.getLogger(__name__)

INNOVATION_JITTER = 1e-10

ObservationOperator = Callable[[Array], Array]


@dataclass(frozen=True)
class ObservationModel:
    """Observation operator with Gaussian error covariance.

    ``h`` maps one state vector to an observation vector. When the operator is linear
    its matrix is kept in ``linear_h`` and whole ensembles are mapped by one product.
    Coordinates (grid units) are needed only for localization.
    """

    h: ObservationOperator
    cov_obs: Array
    linear_h: sp.csr_array | Array | None = None
    coordinates: Array | None = None
    state_coordinates: Array | None = None

    def __post_init__(self) -> None:
        cov = np.atleast_2d(np.asarray(self.cov_obs, dtype=np.float64))
        if cov.shape[0] != cov.shape[1]:
            raise ShapeMismatch(f"observation covariance must be square, got {cov.shape}")
        if not np.allclose(cov, cov.T):
            raise IndefiniteCovariance("observation covariance is not symmetric")
        try:
            np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as err:
            raise IndefiniteCovariance("observation covariance is not positive definite") from err
        object.__setattr__(self, "cov_obs", cov)

    @classmethod
    def linear(
        cls,
        H: ArrayLike | sp.sparray,
        cov_obs: ArrayLike,
        coordinates: Array | None = None,
        state_coordinates: Array | None = None,
    ) -> "ObservationModel":
        """Model y = H x + eta."""
        matrix = sp.csr_array(H) if sp.issparse(H) else np.atleast_2d(np.asarray(H, float))
        return cls(
            h=lambda x: np.asarray(matrix @ x),
            cov_obs=np.asarray(cov_obs, dtype=np.float64),
            linear_h=matrix,
            coordinates=coordinates,
            state_coordinates=state_coordinates,
        )

    @classmethod
    def gather(
        cls,
        indices: ArrayLike,
        n: int,
        cov_obs: ArrayLike,
        state_coordinates: Array | None = None,
    ) -> "ObservationModel":
        """Observe the state components at the given flat indices."""
        idx = np.asarray(indices, dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= n):
            raise IndexOutOfRange(f"observation indices must lie in [0, {n})")
        H = sp.csr_array((np.ones(idx.size), (np.arange(idx.size), idx)), shape=(idx.size, n))
        coords = None if state_coordinates is None else np.asarray(state_coordinates)[idx]
        return cls.linear(H, cov_obs, coordinates=coords, state_coordinates=state_coordinates)

    @property
    def m(self) -> int:
        return int(self.cov_obs.shape[0])

    def apply(self, members: Array) -> Array:
        """Map every column of an n x N matrix to observation space."""
        values = np.asarray(members, dtype=np.float64)
        if self.linear_h is not None:
            return np.asarray(self.linear_h @ values).reshape(self.m, values.shape[1])
        if values.shape[1] == 0:
            return np.zeros((self.m, 0))
        return np.column_stack([self.h(values[:, k]) for k in range(values.shape[1])])


@dataclass(frozen=True)
class LocalizationKernel:
    """Gaussian taper rho(d) = exp(-d^2 / (2 L^2)) with L the radius in grid units."""

    radius: float

    def __post_init__(self) -> None:
        if not self.radius > 0:
            raise ValueError(f"localization radius must be positive, got {self.radius}")

    def matrix(self, a: Array, b: Array) -> Array:
        """Taper between two coordinate sets (rows are points)."""
        if np.isinf(self.radius):
            return np.ones((len(a), len(b)))
        d2 = cdist(np.atleast_2d(a), np.atleast_2d(b), metric="sqeuclidean")
        return np.exp(-d2 / (2.0 * self.radius**2))


@dataclass(frozen=True)
class FilterState:
    """Analysis ensemble of a single-fidelity filter at one assimilation step."""

    ensemble: Ensemble
    step: int = 0
    alpha: float = 1.0


def kalman_gain(
    cov_xy: Array,
    cov_yy: Array,
    cov_obs: Array,
    error: type[LinearAlgebraError] = SingularInnovation,
) -> Array:
    """K = cov_xy (cov_yy + cov_obs)^-1 via Cholesky, with one jittered retry.

    Raises:
        SingularInnovation: If the innovation covariance cannot be factored (or the
            given error class).
    """
    innovation = np.atleast_2d(cov_yy) + np.atleast_2d(cov_obs)
    m = innovation.shape[0]
    if m == 0:
        return np.zeros((cov_xy.shape[0], 0))
    try:
        factor = scipy.linalg.cho_factor(innovation, lower=True)
    except (np.linalg.LinAlgError, ValueError):
        jitter = INNOVATION_JITTER * abs(float(np.trace(innovation))) / m
        logger.warning("innovation covariance not positive definite, adding jitter %.3e", jitter)
        try:
            factor = scipy.linalg.cho_factor(innovation + jitter * np.eye(m), lower=True)
        except (np.linalg.LinAlgError, ValueError) as err:
            raise error("innovation covariance is not positive definite") from err
    return np.asarray(scipy.linalg.cho_solve(factor, np.atleast_2d(cov_xy).T).T)


def analysis_covariance(cov_prior: Array, gain: Array, H: Array, cov_obs: Array) -> Array:
    """Joseph-form analysis covariance (I - K H) P (I - K H)^T + K R K^T."""
    reduction = np.eye(cov_prior.shape[0]) - gain @ H
    return np.asarray(reduction @ cov_prior @ reduction.T + gain @ cov_obs @ gain.T)


def _perturbations(sampler: GaussianSampler, m: int, count: int) -> AnomalyMatrix:
    if sampler.dim != m:
        raise ShapeMismatch(f"sampler draws dim {sampler.dim}, observations have dim {m}")
    return anomalies(Ensemble(sampler.draw(count)))


def _finite(ens: Ensemble, what: str) -> Ensemble:
    if not np.all(np.isfinite(ens.members)):
        raise DivergedAnalysis(f"{what} analysis produced non-finite members")
    return ens


CovarianceHook = Callable[[AnomalyMatrix, AnomalyMatrix], tuple[Array, Array]]


def _stochastic_analysis(
    prior: Ensemble,
    obs: ObservationModel,
    y: ArrayLike,
    sampler: GaussianSampler,
    alpha: float,
    covariances: CovarianceHook,
    what: str,
) -> Ensemble:
    inflated = inflate_ensemble(prior, alpha)
    a_x = anomalies(inflated)
    hx = Ensemble(obs.apply(inflated.members))
    a_hx = anomalies(hx)
    a_eta = _perturbations(sampler, obs.m, prior.size)

    cov_xy, cov_yy = covariances(a_x, a_hx)
    gain = kalman_gain(cov_xy, cov_yy, obs.cov_obs)

    innovation = empirical_mean(hx) - np.asarray(y, dtype=np.float64)
    mean = empirical_mean(inflated) - gain @ innovation
    updated = AnomalyMatrix(a_x.anomalies - gain @ (a_hx.anomalies - a_eta.anomalies))
    return _finite(reassemble(mean, updated), what)


def enkf_analysis(
    prior: Ensemble,
    obs: ObservationModel,
    y: ArrayLike,
    sampler: GaussianSampler,
    alpha: float = 1.0,
) -> Ensemble:
    """Perturbed-observations EnKF analysis with the empirical Kalman gain.

    Args:
        prior: Forecast ensemble (n x N, N >= 2).
        obs: Observation model; sampler must draw from its error covariance.
        y: Observation vector.
        sampler: Source of observation perturbations.
        alpha: Multiplicative inflation of the prior anomalies.

    Raises:
        SingularInnovation: If the innovation covariance cannot be factored.
        DivergedAnalysis: If the analysis is not finite.
    """

    def plain(a_x: AnomalyMatrix, a_hx: AnomalyMatrix) -> tuple[Array, Array]:
        return empirical_cov(a_x, a_hx), empirical_cov(a_hx, a_hx)

    return _stochastic_analysis(prior, obs, y, sampler, alpha, plain, "EnKF")


def _require_geometry(obs: ObservationModel) -> tuple[Array, Array]:
    if obs.coordinates is None or obs.state_coordinates is None:
        raise NoGeometry("localization needs state and observation coordinates")
    return np.asarray(obs.state_coordinates), np.asarray(obs.coordinates)


def localized_enkf_analysis(
    prior: Ensemble,
    obs: ObservationModel,
    y: ArrayLike,
    sampler: GaussianSampler,
    kernel: LocalizationKernel,
    alpha: float = 1.0,
) -> Ensemble:
    """EnKF with Schur-product localization of the cross and innovation covariances.

    Raises:
        NoGeometry: If the observation model carries no coordinates.
    """
    state_xy, obs_xy = _require_geometry(obs)
    rho_xy = kernel.matrix(state_xy, obs_xy)
    rho_yy = kernel.matrix(obs_xy, obs_xy)

    def localized(a_x: AnomalyMatrix, a_hx: AnomalyMatrix) -> tuple[Array, Array]:
        return rho_xy * empirical_cov(a_x, a_hx), rho_yy * empirical_cov(a_hx, a_hx)

    return _stochastic_analysis(prior, obs, y, sampler, alpha, localized, "localized EnKF")


def rblw_intensity(sample_cov: Array, members: int) -> float:
    """Rao-Blackwellized Ledoit-Wolf shrinkage intensity toward a scaled identity.

    ``sample_cov`` is the unbiased estimate from ``members`` samples.
    """
    p = sample_cov.shape[0]
    N = members
    mle = sample_cov * (N - 1) / N
    tr = float(np.trace(mle))
    tr2 = float(np.sum(mle * mle))
    denominator = (N + 2) * (tr2 - tr**2 / p)
    if denominator <= 0:
        return 1.0
    numerator = (N - 2) / N * tr2 + tr**2
    return float(min(numerator / denominator, 1.0))


def localized_target(snapshots: Array, kernel: LocalizationKernel, coordinates: Array) -> Array:
    """Snapshot covariance tapered by the localization kernel (columns are snapshots)."""
    cov = np.atleast_2d(np.cov(snapshots, rowvar=True))
    return np.asarray(cov * kernel.matrix(coordinates, coordinates))


def shrinkage_enkf_analysis(
    prior: Ensemble,
    obs: ObservationModel,
    y: ArrayLike,
    sampler: GaussianSampler,
    target: Array,
    alpha: float = 1.0,
    intensity: float | None = None,
) -> Ensemble:
    """EnKF whose background covariance is shrunk toward a normalized target.

    The covariance is (1 - g) P + g mu T with mu = trace(P) / trace(T) and g from
    the RBLW estimator unless ``intensity`` forces it.

    Raises:
        IndefiniteCovariance: If target is not symmetric positive definite.
    """
    if obs.linear_h is None:
        raise ShapeMismatch("shrinkage analysis needs a linear observation operator")
    T = np.atleast_2d(np.asarray(target, dtype=np.float64))
    if T.shape != (prior.dim, prior.dim):
        raise ShapeMismatch(f"target of shape {T.shape} does not match state dim {prior.dim}")
    try:
        cholesky_factor(T)
    except IndefiniteCovariance as err:
        err.add_note("shrinkage target is not positive definite")
        raise
    H = obs.linear_h

    def shrunk(a_x: AnomalyMatrix, _a_hx: AnomalyMatrix) -> tuple[Array, Array]:
        P = empirical_cov(a_x, a_x)
        gamma = rblw_intensity(P, prior.size) if intensity is None else intensity
        mu = float(np.trace(P) / np.trace(T))
        sigma = (1.0 - gamma) * P + gamma * mu * T
        cov_xy = np.asarray((H @ sigma).T)
        return cov_xy, np.asarray(H @ cov_xy)

    return _stochastic_analysis(prior, obs, y, sampler, alpha, shrunk, "shrinkage EnKF")


def mlenkf_corrected_analysis(
    triple: "TotalVariateTriple",
    obs: ObservationModel,
    y: ArrayLike,
    sampler: GaussianSampler,
    kernel: LocalizationKernel | None = None,
    inflations: tuple[float, float] = (1.0, 1.0),
) -> "TotalVariateTriple":
    """Multilevel EnKF with the signed-measure covariance and three corrections.

    The covariance Cov(X) - Phi Cov(Uhat) Phi^T + Phi Cov(U) Phi^T is localized, the
    control ensemble is reset to Phi* of the principal analysis and every mean is
    re-centered on the multilevel analysis mean. Labeled "corrected-MLEnKF" in outputs.

    Raises:
        IndefiniteCovariance: If the localized innovation matrix stays indefinite.
        DivergedAnalysis: If the analysis is not finite.
    """
    proj = triple.proj
    alpha_x, alpha_u = inflations
    x = inflate_ensemble(triple.principal, alpha_x)
    uhat = inflate_ensemble(triple.control, alpha_x)
    u = inflate_ensemble(triple.ancillary, alpha_u)

    hx = Ensemble(obs.apply(x.members))
    huhat = Ensemble(obs.apply(proj.lift(uhat.members)))
    hu = Ensemble(obs.apply(proj.lift(u.members)))

    a_x, a_hx = anomalies(x), anomalies(hx)
    a_uhat = AnomalyMatrix(proj.lift(anomalies(uhat).anomalies))
    a_u = AnomalyMatrix(proj.lift(anomalies(u).anomalies))
    a_huhat, a_hu = anomalies(huhat), anomalies(hu)

    cov_xy = signed_measure_cov(
        empirical_cov(a_x, a_hx), empirical_cov(a_uhat, a_huhat), empirical_cov(a_u, a_hu)
    )
    cov_yy = signed_measure_cov(
        empirical_cov(a_hx, a_hx), empirical_cov(a_huhat, a_huhat), empirical_cov(a_hu, a_hu)
    )
    if kernel is not None:
        state_xy, obs_xy = _require_geometry(obs)
        cov_xy = kernel.matrix(state_xy, obs_xy) * cov_xy
        cov_yy = kernel.matrix(obs_xy, obs_xy) * cov_yy
    if np.linalg.eigvalsh(cov_yy + obs.cov_obs)[0] <= 0:
        logger.warning("corrected-MLEnKF innovation matrix is indefinite")
    gain = kalman_gain(cov_xy, cov_yy, obs.cov_obs, error=IndefiniteCovariance)

    eta_x = _perturbations(sampler, obs.m, x.size)
    eta_u = _perturbations(sampler.substream(1), obs.m, u.size)

    y = np.asarray(y, dtype=np.float64)
    ml_mean = empirical_mean(x) - proj.lift(empirical_mean(uhat) - empirical_mean(u))
    ml_innovation = empirical_mean(hx) - empirical_mean(huhat) + empirical_mean(hu) - y
    ml_analysis = ml_mean - gain @ ml_innovation

    a_x_post = AnomalyMatrix(a_x.anomalies - gain @ (a_hx.anomalies - eta_x.anomalies))
    reduced_gain = proj.restrict(gain)
    a_u_post = AnomalyMatrix(
        anomalies(u).anomalies - reduced_gain @ (a_hu.anomalies - eta_u.anomalies)
    )

    principal = _finite(reassemble(ml_analysis, a_x_post), "corrected-MLEnKF")
    ancillary = _finite(reassemble(proj.restrict(ml_analysis), a_u_post), "corrected-MLEnKF")
    control = Ensemble(proj.restrict(principal.members))
    return dataclasses.replace(triple, principal=principal, control=control, ancillary=ancillary)
