#!/usr/bin/env python3
"""M-orthogonal lift and restriction operators between a reduced and a full space."""

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from numpy.typing import ArrayLike

from mfda.control_variates import CvGain, GainFlavor, spd_right_solve
from mfda.ensemble import Array
from mfda.errors import BasisDegenerate, ShapeMismatch, SingularControlCovariance

logger = logging.getLogger(__name__)

BIORTHOGONALITY_TOL = 1e-10

Metric = sp.csr_array | Array | None


def _apply_factor(factor: Metric, x: Array) -> Array:
    if factor is None:
        return x
    return np.asarray(factor @ x)


def _apply_metric(factor: Metric, x: Array) -> Array:
    """M x with M = B^T B."""
    if factor is None:
        return x
    return np.asarray(factor.T @ (factor @ x))


@dataclass(frozen=True)
class ProjectionPair:
    """Lift phi (n x r) and its M-adjoint phi_star = phi^T M (r x n).

    The inner product M is kept in factored form M = B^T B (``m_factor``); ``None``
    stands for the Euclidean inner product.
    """

    phi: Array
    phi_star: Array
    m_factor: Metric = None

    @property
    def n(self) -> int:
        return int(self.phi.shape[0])

    @property
    def r(self) -> int:
        return int(self.phi.shape[1])

    @classmethod
    def build(
        cls,
        phi: ArrayLike,
        m_factor: Metric = None,
        m_inner: ArrayLike | sp.sparray | None = None,
        tol: float = BIORTHOGONALITY_TOL,
    ) -> "ProjectionPair":
        """Construct a biorthogonal pair, re-orthogonalizing once when needed.

        Args:
            phi: Basis columns spanning the reduced subspace.
            m_factor: Factor B of the inner product M = B^T B.
            m_inner: Dense or sparse M; factored here when m_factor is not given.
            tol: Largest accepted entry of phi_star phi - I.

        Raises:
            BasisDegenerate: If the basis is not biorthogonal after one pass of
                Gram-Schmidt in the M inner product.
        """
        basis = np.atleast_2d(np.asarray(phi, dtype=np.float64))
        if basis.ndim != 2:
            raise ShapeMismatch("phi must be a matrix")
        factor = m_factor
        if factor is None and m_inner is not None:
            dense = m_inner.toarray() if sp.issparse(m_inner) else np.asarray(m_inner, float)
            factor = np.asarray(scipy.linalg.cholesky(dense, lower=False))
        if factor is not None and factor.shape[1] != basis.shape[0]:
            raise ShapeMismatch(
                f"inner-product factor of shape {factor.shape} does not act on n={basis.shape[0]}"
            )

        pair = cls(basis, _apply_metric(factor, basis).T.copy(), factor)
        if pair.r == 0 or pair.biorthogonality_error() <= tol:
            return pair

        logger.info(
            "basis biorthogonality error %.3e exceeds %.1e, re-orthogonalizing",
            pair.biorthogonality_error(),
            tol,
        )
        gram = pair.phi_star @ pair.phi
        try:
            lower = scipy.linalg.cholesky(0.5 * (gram + gram.T), lower=True)
        except np.linalg.LinAlgError as err:
            raise BasisDegenerate("basis Gram matrix is not positive definite") from err
        basis = scipy.linalg.solve_triangular(lower, basis.T, lower=True).T
        pair = cls(basis, _apply_metric(factor, basis).T.copy(), factor)
        if pair.biorthogonality_error() > tol:
            raise BasisDegenerate(
                f"biorthogonality error {pair.biorthogonality_error():.3e} "
                "after re-orthogonalization"
            )
        return pair

    @classmethod
    def empty(cls, n: int) -> "ProjectionPair":
        """Pair onto the zero-dimensional subspace."""
        return cls(np.zeros((n, 0)), np.zeros((0, n)), None)

    @classmethod
    def identity_truncation(cls, r_from: int, r_to: int) -> "ProjectionPair":
        """Keep the first r_to of r_from nested, Euclidean-orthonormal coordinates."""
        if not 0 <= r_to <= r_from:
            raise ShapeMismatch(f"cannot truncate {r_from} coordinates to {r_to}")
        phi = np.eye(r_from, r_to)
        return cls(phi, phi.T.copy(), None)

    def biorthogonality_error(self) -> float:
        if self.r == 0:
            return 0.0
        return float(np.max(np.abs(self.phi_star @ self.phi - np.eye(self.r))))

    def lift(self, u: ArrayLike) -> Array:
        """Phi u for a reduced vector or a matrix of reduced columns."""
        values = np.asarray(u, dtype=np.float64)
        if values.shape[0] != self.r:
            raise ShapeMismatch(
                f"reduced input has leading dim {values.shape[0]}, expected {self.r}"
            )
        return np.asarray(self.phi @ values)

    def restrict(self, x: ArrayLike) -> Array:
        """Phi* x for a full vector or a matrix of full columns."""
        values = np.asarray(x, dtype=np.float64)
        if values.shape[0] != self.n:
            raise ShapeMismatch(f"full input has leading dim {values.shape[0]}, expected {self.n}")
        return np.asarray(self.phi_star @ values)

    def inner(self, x: ArrayLike, y: ArrayLike) -> float:
        """<x, y>_M."""
        bx = _apply_factor(self.m_factor, np.asarray(x, dtype=np.float64))
        by = _apply_factor(self.m_factor, np.asarray(y, dtype=np.float64))
        return float(np.dot(bx, by))

    def projector(self) -> Array:
        """Dense n x n M-orthogonal projector Phi Phi*."""
        return np.asarray(self.phi @ self.phi_star)

    def complement(self, x: ArrayLike) -> Array:
        """Component of x M-orthogonal to the subspace."""
        values = np.asarray(x, dtype=np.float64)
        return values - self.lift(self.restrict(values))

    def compose(self, inner: "ProjectionPair") -> "ProjectionPair":
        """Chain this pair with one acting on its reduced coordinates.

        The reduced coordinates of an M-orthonormal basis carry the Euclidean inner
        product, so ``inner`` is expected to be Euclidean-orthonormal.
        """
        if inner.n != self.r:
            raise ShapeMismatch(f"inner pair acts on {inner.n} coordinates, expected {self.r}")
        return ProjectionPair(
            self.phi @ inner.phi,
            inner.phi_star @ self.phi_star,
            self.m_factor,
        )

    def save(self, path: Path) -> None:
        """Write the pair to a portable .npz container."""
        path.parent.mkdir(parents=True, exist_ok=True)
        arrays: dict[str, Array] = {
            "phi": self.phi,
            "phi_star": self.phi_star,
            "dims": np.array([self.n, self.r], dtype=np.int64),
        }
        if self.m_factor is not None:
            coo = sp.coo_array(self.m_factor)
            arrays |= {
                "m_data": coo.data,
                "m_row": coo.row.astype(np.int64),
                "m_col": coo.col.astype(np.int64),
                "m_shape": np.array(coo.shape, dtype=np.int64),
            }
        with open(path, "wb") as f:
            np.savez(f, **arrays)

    @classmethod
    def load(cls, path: Path) -> "ProjectionPair":
        """Read a pair written by save."""
        with np.load(path) as data:
            factor: Metric = None
            if "m_data" in data:
                factor = sp.csr_array(
                    (data["m_data"], (data["m_row"], data["m_col"])),
                    shape=tuple(data["m_shape"]),
                )
            return cls(np.array(data["phi"]), np.array(data["phi_star"]), factor)


def lift(p: ProjectionPair, u: ArrayLike) -> Array:
    return p.lift(u)


def restrict(p: ProjectionPair, x: ArrayLike) -> Array:
    return p.restrict(x)


def fixed_gain(p: ProjectionPair, halved: bool = False) -> CvGain:
    """S = Phi, or Phi/2 when the control mean is estimated by an ancillary variate."""
    S = 0.5 * p.phi if halved else p.phi.copy()
    return CvGain(S, GainFlavor.FIXED_PROJECTION)


def optimal_gain_correction(
    cov_dxr_uhat: ArrayLike, cov_uhat: ArrayLike, p: ProjectionPair
) -> CvGain:
    """S = Phi + Cov(dx_r, uhat) Cov(uhat)^-1 where dx_r is the complement of the principal.

    Raises:
        SingularControlCovariance: If cov_uhat is not positive definite.
    """
    cross = np.atleast_2d(np.asarray(cov_dxr_uhat, dtype=np.float64))
    cov = np.atleast_2d(np.asarray(cov_uhat, dtype=np.float64))
    if cross.shape != p.phi.shape:
        raise ShapeMismatch(f"cross covariance {cross.shape} does not match phi {p.phi.shape}")
    correction = spd_right_solve(cross, cov, SingularControlCovariance, "cov_uhat")
    return CvGain(p.phi + correction, GainFlavor.EXACT_MEAN)
