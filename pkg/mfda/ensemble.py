#!/usr/bin/env python3
"""Ensemble statistics: means, anomalies, inflation and seeded Gaussian sampling."""

import logging
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import scipy.linalg
from numpy.typing import NDArray

from mfda.errors import (
    EmptyEnsemble,
    IndefiniteCovariance,
    InsufficientMembers,
    InvalidInflation,
    ShapeMismatch,
)

logger = logging.getLogger(__name__)

Array = NDArray[np.float64]

CHOLESKY_JITTER = 1e-12


@dataclass(frozen=True)
class Ensemble:
    """Ensemble of N member states stored as the columns of an n x N matrix."""

    members: Array

    def __post_init__(self) -> None:
        members = np.asarray(self.members, dtype=np.float64)
        if members.ndim != 2:
            raise ShapeMismatch(f"ensemble members must be a 2-D matrix, got {members.ndim}-D")
        object.__setattr__(self, "members", members)

    @property
    def dim(self) -> int:
        """State dimension n."""
        return int(self.members.shape[0])

    @property
    def size(self) -> int:
        """Member count N."""
        return int(self.members.shape[1])

    def column(self, k: int) -> Array:
        """Return member k."""
        return self.members[:, k]

    def head(self, count: int) -> "Ensemble":
        """Return the first count members."""
        return Ensemble(self.members[:, :count])


@dataclass(frozen=True)
class AnomalyMatrix:
    """Mean-centered members scaled by 1/sqrt(N-1).

    With this scaling the sample covariance is A @ A.T with no further factor.
    """

    anomalies: Array

    def __post_init__(self) -> None:
        object.__setattr__(self, "anomalies", np.asarray(self.anomalies, dtype=np.float64))

    @property
    def dim(self) -> int:
        return int(self.anomalies.shape[0])

    @property
    def size(self) -> int:
        return int(self.anomalies.shape[1])


def empirical_mean(ens: Ensemble) -> Array:
    """Return the member average.

    Raises:
        EmptyEnsemble: If the ensemble has no members.
    """
    if ens.size == 0:
        raise EmptyEnsemble("cannot average an ensemble with no members")
    return np.asarray(ens.members.mean(axis=1))


def anomalies(ens: Ensemble) -> AnomalyMatrix:
    """Return the scaled anomaly matrix (E - mean 1^T) / sqrt(N-1).

    Raises:
        InsufficientMembers: If N < 2.
    """
    if ens.size < 2:
        raise InsufficientMembers(f"anomalies need at least 2 members, got {ens.size}")
    mean = empirical_mean(ens)
    return AnomalyMatrix((ens.members - mean[:, None]) / np.sqrt(ens.size - 1))


def empirical_cov(a: AnomalyMatrix, b: AnomalyMatrix) -> Array:
    """Return the empirical cross covariance A_a @ A_b.T.

    Raises:
        ShapeMismatch: If the member counts differ.
    """
    if a.size != b.size:
        raise ShapeMismatch(f"member counts differ: {a.size} vs {b.size}")
    return a.anomalies @ b.anomalies.T


def ensemble_covariance(ens: Ensemble) -> Array:
    """Unbiased sample covariance of an ensemble."""
    a = anomalies(ens)
    return empirical_cov(a, a)


def inflate(a: AnomalyMatrix, alpha: float) -> AnomalyMatrix:
    """Scale anomalies multiplicatively.

    Raises:
        InvalidInflation: If alpha < 1.
    """
    if not alpha >= 1.0:
        raise InvalidInflation(f"inflation factor must be >= 1, got {alpha}")
    if alpha == 1.0:
        return a
    return AnomalyMatrix(alpha * a.anomalies)


def reassemble(mean: Array, a: AnomalyMatrix) -> Ensemble:
    """Rebuild members from a mean and scaled anomalies."""
    mean = np.asarray(mean, dtype=np.float64)
    if mean.shape != (a.dim,):
        raise ShapeMismatch(f"mean of shape {mean.shape} does not match anomaly dim {a.dim}")
    return Ensemble(mean[:, None] + np.sqrt(a.size - 1) * a.anomalies)


def inflate_ensemble(ens: Ensemble, alpha: float) -> Ensemble:
    """Inflate members about their mean."""
    if not alpha >= 1.0:
        raise InvalidInflation(f"inflation factor must be >= 1, got {alpha}")
    if alpha == 1.0 or ens.size < 2:
        return ens
    return reassemble(empirical_mean(ens), inflate(anomalies(ens), alpha))


def cholesky_factor(cov: Array) -> Array:
    """Lower Cholesky factor, retried once with diagonal jitter.

    Raises:
        IndefiniteCovariance: If the jittered matrix is still not positive definite.
    """
    cov = np.atleast_2d(np.asarray(cov, dtype=np.float64))
    n = cov.shape[0]
    if n == 0:
        return np.zeros((0, 0))
    try:
        return np.asarray(scipy.linalg.cholesky(cov, lower=True))
    except np.linalg.LinAlgError:
        jitter = CHOLESKY_JITTER * max(float(np.trace(cov)), np.finfo(float).tiny) / n
        logger.warning("covariance not positive definite, adding jitter %.3e", jitter)
        try:
            return np.asarray(scipy.linalg.cholesky(cov + jitter * np.eye(n), lower=True))
        except np.linalg.LinAlgError as err:
            raise IndefiniteCovariance("covariance factorization failed after jitter") from err


@dataclass(eq=False)
class GaussianSampler:
    """Seeded source of N(0, L L^T) draws.

    Streams are counter-based (Philox) and keyed by a SeedSequence spawn key, so every
    substream is an independent deterministic function of the master seed. A sampler
    is single-owner mutable state.
    """

    seed: int
    factor: Array | None = None
    dim: int = 0
    spawn_key: tuple[int, ...] = ()
    _generator: np.random.Generator = field(init=False, repr=False)
    _children: dict[int, "GaussianSampler"] = field(init=False, repr=False, default_factory=dict)

    def __post_init__(self) -> None:
        if self.factor is not None:
            self.factor = np.atleast_2d(np.asarray(self.factor, dtype=np.float64))
            self.dim = int(self.factor.shape[0])
        seq = np.random.SeedSequence(int(self.seed) & (2**64 - 1), spawn_key=self.spawn_key)
        self._generator = np.random.Generator(np.random.Philox(seq))

    @classmethod
    def from_covariance(cls, cov: Array, seed: int) -> "GaussianSampler":
        """Build a sampler whose draws have covariance cov."""
        return cls(seed=seed, factor=cholesky_factor(cov))

    @classmethod
    def standard(cls, dim: int, seed: int) -> "GaussianSampler":
        """Sampler of N(0, I_dim) draws."""
        return cls(seed=seed, factor=None, dim=dim)

    @property
    def generator(self) -> np.random.Generator:
        """Underlying generator, for non-Gaussian draws from the same stream."""
        return self._generator

    def draw(self, count: int) -> Array:
        """Return a dim x count matrix of independent draws."""
        z = self._generator.standard_normal((self.dim, count))
        if self.factor is None:
            return z
        return np.asarray(self.factor @ z)

    def substream(self, key: int) -> "GaussianSampler":
        """Independent child stream with the same factor, created once per key."""
        if key not in self._children:
            self._children[key] = GaussianSampler(
                seed=self.seed,
                factor=self.factor,
                dim=self.dim,
                spawn_key=(*self.spawn_key, key),
            )
        return self._children[key]

    def get_state(self) -> dict[str, Any]:
        """JSON-compatible snapshot of this stream and every created substream."""
        return {
            "bit_generator": _to_builtin(self._generator.bit_generator.state),
            "children": {str(k): child.get_state() for k, child in self._children.items()},
        }

    def set_state(self, state: dict[str, Any]) -> None:
        """Restore a snapshot produced by get_state."""
        self._generator.bit_generator.state = _from_builtin(state["bit_generator"])
        for key, child_state in state.get("children", {}).items():
            self.substream(int(key)).set_state(child_state)


def sample_gaussian(s: GaussianSampler, count: int) -> Ensemble:
    """Draw count i.i.d. N(0, L L^T) members."""
    if count < 1:
        raise InsufficientMembers(f"count must be >= 1, got {count}")
    return Ensemble(s.draw(count))


def _to_builtin(value: Any) -> Any:
    if isinstance(value, dict):
        return {k: _to_builtin(v) for k, v in value.items()}
    if isinstance(value, np.ndarray):
        return {"__ndarray__": value.tolist(), "dtype": str(value.dtype)}
    if isinstance(value, np.integer):
        return int(value)
    return value


def _from_builtin(value: Any) -> Any:
    if isinstance(value, dict):
        if "__ndarray__" in value:
            return np.asarray(value["__ndarray__"], dtype=value["dtype"])
        return {k: _from_builtin(v) for k, v in value.items()}
    return value
