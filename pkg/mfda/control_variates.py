#!/usr/bin/env python3
"""Linear control-variate gains, total-variate statistics and the two-fidelity cost model."""

import logging
from collections.abc import Sequence
from dataclasses import dataclass
from enum import Enum
from functools import cached_property

import numpy as np
import scipy.linalg
from numpy.typing import ArrayLike

from mfda.ensemble import Array
from mfda.errors import (
    DegenerateVarianceBudget,
    IndefiniteCovariance,
    LinearAlgebraError,
    ShapeMismatch,
    SingularControlCovariance,
    SingularSumCovariance,
)

logger = logging.getLogger(__name__)


class GainFlavor(Enum):
    """How a control-variate gain was obtained."""

    EXACT_MEAN = "exact-mean"
    ANCILLARY = "ancillary"
    HALF = "half"
    EMPIRICAL = "empirical"
    EMPIRICAL_FULL = "empirical-full"
    FIXED_PROJECTION = "fixed-projection"


@dataclass(frozen=True)
class CvGain:
    """Gain S coupling control-space differences back into the principal space."""

    S: Array
    flavor: GainFlavor

    def __post_init__(self) -> None:
        object.__setattr__(self, "S", np.atleast_2d(np.asarray(self.S, dtype=np.float64)))

    @property
    def shape(self) -> tuple[int, int]:
        return (int(self.S.shape[0]), int(self.S.shape[1]))


def _matrix(value: ArrayLike) -> Array:
    return np.atleast_2d(np.asarray(value, dtype=np.float64))


def spd_right_solve(
    cross: Array, cov: Array, error: type[LinearAlgebraError], what: str
) -> Array:
    """Return cross @ inv(cov) for symmetric positive definite cov."""
    if cross.shape[1] != cov.shape[0] or cov.shape[0] != cov.shape[1]:
        raise ShapeMismatch(f"cannot solve {cross.shape} against {cov.shape}")
    if cov.shape[0] == 0:
        return np.zeros(cross.shape)
    try:
        factor = scipy.linalg.cho_factor(cov, lower=True, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as err:
        raise error(f"{what} is not positive definite") from err
    return np.asarray(scipy.linalg.cho_solve(factor, cross.T).T)


def optimal_gain(cov_xu: ArrayLike, cov_uu: ArrayLike) -> CvGain:
    """Gain minimizing the generalized variance when the control mean is known.

    Raises:
        SingularControlCovariance: If cov_uu is not positive definite.
    """
    S = spd_right_solve(_matrix(cov_xu), _matrix(cov_uu), SingularControlCovariance, "cov_uu")
    return CvGain(S, GainFlavor.EXACT_MEAN)


def ancillary_gain(cov_xu: ArrayLike, cov_uhat: ArrayLike, cov_u: ArrayLike) -> CvGain:
    """Optimal gain when the control mean is replaced by an independent ancillary variate.

    Raises:
        SingularSumCovariance: If cov_uhat + cov_u is not positive definite.
    """
    total = _matrix(cov_uhat) + _matrix(cov_u)
    S = spd_right_solve(_matrix(cov_xu), total, SingularSumCovariance, "cov_uhat + cov_u")
    return CvGain(S, GainFlavor.ANCILLARY)


def half_gain(cov_xu: ArrayLike, cov_uu: ArrayLike) -> CvGain:
    """Ancillary gain when control and ancillary variates share their distribution."""
    cov = _matrix(cov_uu)
    try:
        S = ancillary_gain(cov_xu, cov, cov).S
    except SingularSumCovariance as err:
        raise SingularControlCovariance(str(err)) from err
    return CvGain(S, GainFlavor.HALF)


def total_variate_cov(
    cov_xx: ArrayLike,
    cov_xu: ArrayLike,
    cov_uhat: ArrayLike,
    cov_u: ArrayLike,
    S: CvGain | ArrayLike,
) -> Array:
    """Covariance of the total variate chi - S (uhat - u) with u independent of (chi, uhat)."""
    xx, xu = _matrix(cov_xx), _matrix(cov_xu)
    uhat, u = _matrix(cov_uhat), _matrix(cov_u)
    gain = S.S if isinstance(S, CvGain) else _matrix(S)
    if gain.shape != xu.shape or uhat.shape != u.shape or xx.shape[0] != xu.shape[0]:
        raise ShapeMismatch(
            f"non-conforming shapes: xx {xx.shape}, xu {xu.shape}, S {gain.shape}, "
            f"uhat {uhat.shape}, u {u.shape}"
        )
    cov = xx - xu @ gain.T - gain @ xu.T + gain @ (uhat + u) @ gain.T
    return np.asarray(0.5 * (cov + cov.T))


def signed_measure_cov(cov_xx: ArrayLike, cov_uhat: ArrayLike, cov_u: ArrayLike) -> Array:
    """Multilevel combination Cov(x) - Cov(uhat) + Cov(u); may be indefinite."""
    xx, uhat, u = _matrix(cov_xx), _matrix(cov_uhat), _matrix(cov_u)
    if not xx.shape == uhat.shape == u.shape:
        raise ShapeMismatch(f"shapes differ: {xx.shape}, {uhat.shape}, {u.shape}")
    return np.asarray(xx - uhat + u)


def empirical_gain(
    cov_xu_emp: ArrayLike, cov_uhat_emp: ArrayLike, cov_u_exact: ArrayLike
) -> CvGain:
    """Ancillary gain from empirical principal/control statistics and an exact ancillary covariance.

    Raises:
        SingularSumCovariance: If the covariance sum is not invertible.
    """
    gain = ancillary_gain(cov_xu_emp, cov_uhat_emp, cov_u_exact)
    return CvGain(gain.S, GainFlavor.EMPIRICAL)


def empirical_full_gain(
    cov_xu_emp: ArrayLike, cov_uhat_emp: ArrayLike, cov_u_emp: ArrayLike
) -> CvGain:
    """Fully empirical ancillary gain, diagnostic only.

    With undersampled covariances the sum can be singular; a pseudo-inverse is used
    then and a warning is logged.
    """
    xu = _matrix(cov_xu_emp)
    total = _matrix(cov_uhat_emp) + _matrix(cov_u_emp)
    try:
        S = spd_right_solve(xu, total, SingularSumCovariance, "empirical covariance sum")
    except SingularSumCovariance:
        logger.warning("empirical covariance sum is singular, using pseudo-inverse")
        S = xu @ np.linalg.pinv(total, hermitian=True)
    return CvGain(S, GainFlavor.EMPIRICAL_FULL)


@dataclass(frozen=True)
class FidelityChain:
    """Ordered per-level gains S_1..S_L and their running products."""

    gains: tuple[Array, ...]

    def __post_init__(self) -> None:
        gains = tuple(_matrix(g) for g in self.gains)
        for level in range(1, len(gains)):
            if gains[level - 1].shape[1] != gains[level].shape[0]:
                raise ShapeMismatch(
                    f"gain {level} of shape {gains[level].shape} does not chain onto "
                    f"{gains[level - 1].shape}"
                )
        object.__setattr__(self, "gains", gains)

    @classmethod
    def halving(cls, lifts: Sequence[ArrayLike]) -> "FidelityChain":
        """Default telescoping gains S_l = Phi_l / 2."""
        return cls(tuple(0.5 * _matrix(lift) for lift in lifts))

    @property
    def levels(self) -> int:
        return len(self.gains)

    @cached_property
    def accumulated(self) -> tuple[Array, ...]:
        """S-bar_l = S_1 S_2 ... S_l."""
        products: list[Array] = []
        for gain in self.gains:
            products.append(gain if not products else products[-1] @ gain)
        return tuple(products)


def telescoping_total_variate(
    x_mean: ArrayLike, diffs: Sequence[ArrayLike], chain: FidelityChain
) -> Array:
    """x - sum_l S-bar_l (uhat_l - u_l)."""
    if len(diffs) != chain.levels:
        raise ShapeMismatch(f"{len(diffs)} differences for a chain of {chain.levels} levels")
    total = np.array(x_mean, dtype=np.float64, ndmin=1)
    for acc, diff in zip(chain.accumulated, diffs):
        total = total - acc @ np.asarray(diff, dtype=np.float64).reshape(-1)
    return total


def log_generalized_variance(cov: ArrayLike) -> float:
    """log det(cov) through a Cholesky factor.

    Raises:
        IndefiniteCovariance: If cov is not positive definite.
    """
    try:
        factor, _ = scipy.linalg.cho_factor(_matrix(cov), lower=True)
    except np.linalg.LinAlgError as err:
        raise IndefiniteCovariance("generalized variance needs a positive definite matrix") from err
    return float(2.0 * np.sum(np.log(np.diag(factor))))


@dataclass(frozen=True)
class CostModel:
    """Abstract work units of a two-fidelity estimator."""

    C_x: float
    C_u: float
    N_x: int
    N_u: int

    def __post_init__(self) -> None:
        if self.C_x < 0 or self.C_u < 0:
            raise ValueError("sample costs must be nonnegative")
        if self.N_x < 2 or self.N_u < 2:
            raise ValueError("member counts must be at least 2")


def estimator_cost(m: CostModel) -> float:
    """N_x C_x + (N_x + N_u) C_u: the control variate rides along with every principal run."""
    return float(m.N_x * m.C_x + (m.N_x + m.N_u) * m.C_u)


def effective_ensemble_size(
    sigma_x: float, sigma_z: float, sigma_su: float, n_x: int, n_u: int
) -> float:
    """Member count of a plain EnKF matching the total-variate mean variance.

    Raises:
        DegenerateVarianceBudget: If n_u sigma_z - sigma_su (n_u - n_x) <= 0.
    """
    denominator = n_u * sigma_z - sigma_su * (n_u - n_x)
    if denominator <= 0:
        raise DegenerateVarianceBudget(f"denominator {denominator} is not positive")
    return float(n_x * n_u * sigma_x / denominator)


def equivalent_enkf_cost(m: CostModel, m_x: float) -> float:
    """Cost of a single-fidelity ensemble of the effective size."""
    return float(m_x * m.C_x)


def mfenkf_is_cheaper(m: CostModel, m_x: float) -> bool:
    """C_u <= C_x (M_X - N_x) / (N_x + N_u)."""
    return m.C_u <= m.C_x * (m_x - m.N_x) / (m.N_x + m.N_u)
