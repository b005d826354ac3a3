#!/usr/bin/env python3
"""Exception hierarchy for mfda.

Every error a filter, model or experiment can raise derives from MfdaError so the
CLI can map families to exit codes.
"""


class MfdaError(Exception):
    """Base class for all mfda errors."""


class ConfigError(MfdaError, ValueError):
    """Invalid or unknown experiment configuration."""


# Ensembles


class EnsembleError(MfdaError, ValueError):
    """Malformed ensemble input."""


class EmptyEnsemble(EnsembleError):
    """Ensemble has no members."""


class InsufficientMembers(EnsembleError):
    """Too few members for a covariance estimate."""


class ShapeMismatch(EnsembleError):
    """Operands do not conform."""


class InvalidInflation(EnsembleError):
    """Inflation factor below one."""


# Linear algebra


class LinearAlgebraError(MfdaError, ArithmeticError):
    """A factorization or solve could not be carried out."""


class SingularControlCovariance(LinearAlgebraError):
    """Control-variate covariance is not positive definite."""


class SingularSumCovariance(LinearAlgebraError):
    """Sum of control and ancillary covariances is not positive definite."""


class SingularInnovation(LinearAlgebraError):
    """Innovation covariance is singular."""


class IndefiniteCovariance(LinearAlgebraError):
    """Covariance stayed indefinite after jitter."""


class DegenerateVarianceBudget(LinearAlgebraError):
    """Effective ensemble size denominator is not positive."""


class RankDeficient(LinearAlgebraError):
    """Requested more modes than the snapshot set supports."""


class BasisDegenerate(LinearAlgebraError):
    """Basis is not biorthogonal even after re-orthogonalization."""


class PoissonSolveError(LinearAlgebraError):
    """Poisson solve residual exceeds its bound."""


# Geometry


class GeometryError(MfdaError, ValueError):
    """Grid or coordinate problem."""


class NoGeometry(GeometryError):
    """Localization requested without grid coordinates."""


class IncompatibleGrids(GeometryError):
    """Fine and coarse grids are not nested."""


class IndexOutOfRange(GeometryError):
    """Observation index outside the grid."""


# Numerical divergence


class NumericalDivergence(MfdaError, ArithmeticError):
    """A model or filter produced unusable numbers."""


class StepSizeCollapse(NumericalDivergence):
    """Adaptive step size fell below the minimum."""


class Blowup(NumericalDivergence):
    """Integration produced non-finite values."""


class ModelBlowUp(NumericalDivergence):
    """Propagation of one ensemble member failed."""

    def __init__(self, member: int, message: str = "") -> None:
        self.member = member
        super().__init__(f"member {member}: {message}" if message else f"member {member}")


class DivergedAnalysis(NumericalDivergence):
    """Analysis ensemble contains non-finite values."""


class UnsupportedBin(MfdaError, ValueError):
    """Reference histogram has an empty bin."""


def exit_code(err: BaseException) -> int:
    """CLI exit status for an error: 2 configuration, 3 divergence, 1 anything else."""
    if isinstance(err, ConfigError):
        return 2
    if isinstance(err, NumericalDivergence):
        return 3
    return 1
