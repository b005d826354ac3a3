#!/usr/bin/env python3
"""Multifidelity EnKF over principal, control and ancillary ensembles.

The two-fidelity filter is the one-level case of the telescopic ladder: every public
two-fidelity operation builds a one-level ladder and runs the same engine, so both paths
agree bit for bit. The total variate is

    Z = X - sum_l 2^-l Phi_1..Phi_l (Uhat_l - U_l)

where control Uhat_l is paired member-for-member with the level l-1 ensemble (the
principal for l = 1) and U_l is the independent ancillary ensemble of level l.
"""

import logging
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from enum import Enum
from functools import cached_property

import numpy as np
from joblib import Parallel, delayed
from numpy.typing import ArrayLike

from mfda.control_variates import CvGain, half_gain, total_variate_cov
from mfda.enkf import LocalizationKernel, ObservationModel, analysis_covariance, kalman_gain
from mfda.ensemble import (
    AnomalyMatrix,
    Array,
    Ensemble,
    GaussianSampler,
    anomalies,
    empirical_mean,
    ensemble_covariance,
    inflate_ensemble,
    reassemble,
)
from mfda.errors import (
    DivergedAnalysis,
    ModelBlowUp,
    NoGeometry,
    ShapeMismatch,
)
from mfda.projection import ProjectionPair

logger = logging.getLogger(__name__)

Propagator = Callable[[Array], Array]

METHOD_I_ANCILLARY_SCALE = np.sqrt(3.0)


@dataclass(frozen=True)
class TotalVariateTriple:
    """Principal (n x N_x), control (r x N_x) and ancillary (r x N_u) ensembles.

    Column k of the control is paired with column k of the principal.
    """

    principal: Ensemble
    control: Ensemble
    ancillary: Ensemble
    proj: ProjectionPair

    def __post_init__(self) -> None:
        if self.control.size != self.principal.size:
            raise ShapeMismatch(
                f"control has {self.control.size} members, principal has {self.principal.size}"
            )
        if self.principal.dim != self.proj.n:
            raise ShapeMismatch(f"principal dim {self.principal.dim} != projection n {self.proj.n}")
        if not self.control.dim == self.ancillary.dim == self.proj.r:
            raise ShapeMismatch(
                f"reduced ensembles have dims {self.control.dim}/{self.ancillary.dim}, "
                f"projection r is {self.proj.r}"
            )

    @classmethod
    def from_principal(
        cls, principal: Ensemble, ancillary: Ensemble, proj: ProjectionPair
    ) -> "TotalVariateTriple":
        """Triple whose control is the projection of the principal members."""
        return cls(principal, Ensemble(proj.restrict(principal.members)), ancillary, proj)


class NoiseKind(Enum):
    METHOD_I = "i"
    METHOD_II = "ii"


@dataclass(frozen=True)
class NoiseMethod:
    """How the three perturbation streams are correlated.

    Method (i) reuses the principal draw for the control and inflates the ancillary
    draw by three, so the total variate sees exactly R. Method (ii) scales the control
    draw by s and the ancillary draw by s.
    """

    kind: NoiseKind = NoiseKind.METHOD_I
    s: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", NoiseKind(self.kind))
        if not self.s > 0:
            raise ValueError(f"noise scale s must be positive, got {self.s}")

    @classmethod
    def method_i(cls) -> "NoiseMethod":
        return cls(NoiseKind.METHOD_I)

    @classmethod
    def method_ii(cls, s: float = 1.0) -> "NoiseMethod":
        return cls(NoiseKind.METHOD_II, s)


class Recentering(Enum):
    """Where analysis means come from."""

    TOTAL = "total"
    CONTROL = "control"


@dataclass(frozen=True)
class FidelityLevel:
    """One rung of the ladder: the pair from level l-1 to l, its model and its ancillary size."""

    pair: ProjectionPair
    model: Propagator
    n_u: int


@dataclass(frozen=True)
class FidelityLadder:
    """Hierarchy n = r_0 > r_1 > ... > r_L of nested reduced spaces."""

    levels: tuple[FidelityLevel, ...]

    def __post_init__(self) -> None:
        levels = tuple(self.levels)
        if not levels:
            raise ShapeMismatch("a fidelity ladder needs at least one level")
        dims = [levels[0].pair.n] + [level.pair.r for level in levels]
        for ell in range(1, len(levels)):
            if levels[ell].pair.n != levels[ell - 1].pair.r:
                raise ShapeMismatch(
                    f"level {ell + 1} acts on dim {levels[ell].pair.n}, "
                    f"level {ell} provides {levels[ell - 1].pair.r}"
                )
        if any(a <= b for a, b in zip(dims, dims[1:])):
            raise ShapeMismatch(f"dimension chain {dims} is not strictly decreasing")
        object.__setattr__(self, "levels", levels)

    @property
    def depth(self) -> int:
        return len(self.levels)

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.levels[0].pair.n, *(level.pair.r for level in self.levels))

    @property
    def pairs(self) -> tuple[ProjectionPair, ...]:
        return tuple(level.pair for level in self.levels)

    @property
    def models(self) -> tuple[Propagator, ...]:
        return tuple(level.model for level in self.levels)

    @cached_property
    def accumulated(self) -> tuple[ProjectionPair, ...]:
        return _accumulate(self.pairs)


@dataclass(frozen=True)
class LadderEnsembles:
    """Principal ensemble with one control and one ancillary ensemble per level."""

    principal: Ensemble
    controls: tuple[Ensemble, ...]
    ancillaries: tuple[Ensemble, ...]

    def __post_init__(self) -> None:
        controls, ancillaries = tuple(self.controls), tuple(self.ancillaries)
        if len(controls) != len(ancillaries):
            raise ShapeMismatch(f"{len(controls)} controls for {len(ancillaries)} ancillaries")
        partners = (self.principal, *ancillaries[:-1])
        for ell, (control, partner) in enumerate(zip(controls, partners), start=1):
            if control.size != partner.size:
                raise ShapeMismatch(
                    f"control of level {ell} has {control.size} members, its partner has "
                    f"{partner.size}"
                )
        object.__setattr__(self, "controls", controls)
        object.__setattr__(self, "ancillaries", ancillaries)

    @property
    def depth(self) -> int:
        return len(self.controls)

    @classmethod
    def from_triple(cls, triple: TotalVariateTriple) -> "LadderEnsembles":
        return cls(triple.principal, (triple.control,), (triple.ancillary,))

    def to_triple(self, proj: ProjectionPair) -> TotalVariateTriple:
        if self.depth != 1:
            raise ShapeMismatch(f"a ladder of depth {self.depth} is not a triple")
        return TotalVariateTriple(self.principal, self.controls[0], self.ancillaries[0], proj)


@dataclass(frozen=True)
class IndirectObservations:
    """Per-member observation-space evaluations of every ensemble in a ladder."""

    principal: Ensemble
    controls: tuple[Ensemble, ...]
    ancillaries: tuple[Ensemble, ...]

    @property
    def control(self) -> Ensemble:
        return self.controls[0]

    @property
    def ancillary(self) -> Ensemble:
        return self.ancillaries[0]

    def mean(self) -> Array:
        """Mean of the combined operator Hbar(Z)."""
        total = empirical_mean(self.principal)
        for ell, (hc, ha) in enumerate(zip(self.controls, self.ancillaries), start=1):
            total = total - _weight(ell) * (empirical_mean(hc) - empirical_mean(ha))
        return total


@dataclass(frozen=True)
class ObservationPerturbations:
    """Synthetic observation errors for every ensemble of a ladder (m x N each)."""

    principal: Array
    controls: tuple[Array, ...]
    ancillaries: tuple[Array, ...]

    def total_variate(self) -> Array:
        """eta^Z over the first N_x members of every stream."""
        count = self.principal.shape[1]
        total = self.principal.copy()
        for ell, (c, a) in enumerate(zip(self.controls, self.ancillaries), start=1):
            if c.shape[1] < count or a.shape[1] < count:
                raise ShapeMismatch("every stream needs at least N_x members")
            total = total - _weight(ell) * (c[:, :count] - a[:, :count])
        return total


def _weight(ell: int) -> float:
    return 2.0**-ell


def _accumulate(pairs: Sequence[ProjectionPair]) -> tuple[ProjectionPair, ...]:
    accumulated: list[ProjectionPair] = []
    for pair in pairs:
        accumulated.append(pair if not accumulated else accumulated[-1].compose(pair))
    return tuple(accumulated)


def noise_covariance_factor(method: NoiseMethod, levels: int = 1) -> float:
    """Scalar c with Cov(eta^Z) = c R.

    Method (i) gives c = 1 and applies to a single level. Method (ii) gives
    (1 - s/2)^2 + s^2 sum_{l<L} 4^-(l+1) + s^2 4^-L, which is 1 - s + s^2/2 for one
    level and (1 + 2^(1-2L)) / 3 for s = 1.
    """
    if levels < 1:
        raise ShapeMismatch(f"a ladder needs at least one level, got {levels}")
    if method.kind is NoiseKind.METHOD_I:
        if levels != 1:
            raise ValueError("noise method (i) is defined for two fidelities only")
        return 1.0
    s = method.s
    factor = (1.0 - 0.5 * s) ** 2 + s**2 * 4.0**-levels
    for ell in range(1, levels):
        factor += s**2 * 4.0 ** -(ell + 1)
    return float(factor)


def perturb_observations(
    method: NoiseMethod,
    cov_obs: ArrayLike,
    sampler: GaussianSampler,
    n_x: int,
    n_u: int | Sequence[int],
) -> ObservationPerturbations:
    """Draw correlated perturbation streams.

    ``sampler`` draws from N(0, cov_obs). The principal stream comes from the sampler
    itself and the level-l ancillary stream from ``sampler.substream(l)``.
    """
    m = np.atleast_2d(np.asarray(cov_obs)).shape[0]
    if sampler.dim != m:
        raise ShapeMismatch(f"sampler draws dim {sampler.dim}, observations have dim {m}")
    sizes = (n_u,) if isinstance(n_u, int) else tuple(n_u)
    eta_x = sampler.draw(n_x)

    if method.kind is NoiseKind.METHOD_I:
        if len(sizes) != 1:
            raise ValueError("noise method (i) is defined for two fidelities only")
        eta_u = METHOD_I_ANCILLARY_SCALE * sampler.substream(1).draw(sizes[0])
        return ObservationPerturbations(eta_x, (eta_x,), (eta_u,))

    s = method.s
    controls: list[Array] = [s * eta_x]
    ancillaries: list[Array] = []
    for ell, size in enumerate(sizes, start=1):
        ancillaries.append(s * sampler.substream(ell).draw(size))
        if ell < len(sizes):
            controls.append(ancillaries[-1])
    return ObservationPerturbations(eta_x, tuple(controls), tuple(ancillaries))


def _advance(model: Propagator, state: Array, member: int) -> Array:
    try:
        result = np.asarray(model(state), dtype=np.float64)
    except ArithmeticError as err:
        raise ModelBlowUp(member, str(err)) from err
    if result.shape != state.shape:
        raise ShapeMismatch(f"propagator returned shape {result.shape} for {state.shape}")
    if not np.all(np.isfinite(result)):
        raise ModelBlowUp(member, "non-finite state")
    return result


def propagate(ens: Ensemble, model: Propagator, n_jobs: int = 1) -> Ensemble:
    """Advance every member; members run on joblib threads when n_jobs > 1.

    Raises:
        ModelBlowUp: With the index of the first failing member.
    """
    if ens.size == 0:
        return ens
    if n_jobs == 1:
        columns = [_advance(model, ens.column(k), k) for k in range(ens.size)]
    else:
        columns = Parallel(n_jobs=n_jobs, prefer="threads")(
            delayed(_advance)(model, ens.column(k), k) for k in range(ens.size)
        )
    return Ensemble(np.column_stack(columns).reshape(ens.dim, ens.size))


def _ladder_forecast(
    ens: LadderEnsembles,
    pairs: Sequence[ProjectionPair],
    fom: Propagator,
    roms: Sequence[Propagator],
    n_jobs: int,
) -> LadderEnsembles:
    sources = (ens.principal, *ens.ancillaries[:-1])
    controls = tuple(
        Ensemble(pair.restrict(source.members)) for pair, source in zip(pairs, sources)
    )

    def run(what: str, e: Ensemble, model: Propagator) -> Ensemble:
        try:
            return propagate(e, model, n_jobs)
        except ModelBlowUp as err:
            err.add_note(f"while propagating the {what} ensemble")
            raise

    principal = run("principal", ens.principal, fom)
    controls = tuple(
        run(f"level-{ell} control", c, rom)
        for ell, (c, rom) in enumerate(zip(controls, roms), start=1)
    )
    ancillaries = tuple(
        run(f"level-{ell} ancillary", a, rom)
        for ell, (a, rom) in enumerate(zip(ens.ancillaries, roms), start=1)
    )
    return LadderEnsembles(principal, controls, ancillaries)


def mf_forecast(
    triple: TotalVariateTriple, fom: Propagator, rom: Propagator, n_jobs: int = 1
) -> TotalVariateTriple:
    """Reset the control to the projected principal, then propagate all three ensembles.

    Raises:
        ModelBlowUp: If a member propagation fails.
    """
    ens = LadderEnsembles.from_triple(triple)
    forecast = _ladder_forecast(ens, (triple.proj,), fom, (rom,), n_jobs)
    return forecast.to_triple(triple.proj)


def telescopic_forecast(
    ladder: FidelityLadder, ens: LadderEnsembles, fom: Propagator, n_jobs: int = 1
) -> LadderEnsembles:
    """Forecast every level; level-l controls are projections of level l-1 analyses."""
    _check_depth(ladder, ens)
    return _ladder_forecast(ens, ladder.pairs, fom, ladder.models, n_jobs)


def _check_depth(ladder: FidelityLadder, ens: LadderEnsembles) -> None:
    if ladder.depth != ens.depth:
        raise ShapeMismatch(f"ladder has {ladder.depth} levels, ensembles have {ens.depth}")
    if ens.principal.dim != ladder.dims[0]:
        raise ShapeMismatch(f"principal dim {ens.principal.dim} != ladder dim {ladder.dims[0]}")


def _evaluate(
    ens: LadderEnsembles, accumulated: Sequence[ProjectionPair], obs: ObservationModel
) -> IndirectObservations:
    return IndirectObservations(
        Ensemble(obs.apply(ens.principal.members)),
        tuple(Ensemble(obs.apply(p.lift(c.members))) for p, c in zip(accumulated, ens.controls)),
        tuple(
            Ensemble(obs.apply(p.lift(a.members))) for p, a in zip(accumulated, ens.ancillaries)
        ),
    )


def indirect_observation(
    triple: TotalVariateTriple,
    obs_full: ObservationModel,
    obs_reduced: ObservationModel | None = None,
) -> IndirectObservations:
    """Evaluate H(X), H_r(Uhat) and H_r(U) per member.

    Without ``obs_reduced`` the reduced operator is H_r(u) = H(Phi u).
    """
    if obs_reduced is None:
        return _evaluate(LadderEnsembles.from_triple(triple), (triple.proj,), obs_full)
    if obs_reduced.m != obs_full.m:
        raise ShapeMismatch(f"reduced operator observes {obs_reduced.m}, full {obs_full.m}")
    return IndirectObservations(
        Ensemble(obs_full.apply(triple.principal.members)),
        (Ensemble(obs_reduced.apply(triple.control.members)),),
        (Ensemble(obs_reduced.apply(triple.ancillary.members)),),
    )


def _group_anomalies(
    ens: LadderEnsembles,
    accumulated: Sequence[ProjectionPair],
    evals: IndirectObservations,
) -> list[tuple[Array, Array]]:
    """Total-variate anomalies split into independent member groups.

    Group 0 pairs the principal with the level-1 control; group l pairs the level-l
    ancillary with the level-(l+1) control. Cross covariances are sums over groups.
    """
    z = anomalies(ens.principal).anomalies
    h = anomalies(evals.principal).anomalies
    groups: list[tuple[Array, Array]] = []
    for ell, pair in enumerate(accumulated, start=1):
        w = _weight(ell)
        a_control = pair.lift(anomalies(ens.controls[ell - 1]).anomalies)
        h_control = anomalies(evals.controls[ell - 1]).anomalies
        groups.append((z - w * a_control, h - w * h_control))
        z = w * pair.lift(anomalies(ens.ancillaries[ell - 1]).anomalies)
        h = w * anomalies(evals.ancillaries[ell - 1]).anomalies
    groups.append((z, h))
    return groups


def _ladder_covariances(
    ens: LadderEnsembles,
    accumulated: Sequence[ProjectionPair],
    evals: IndirectObservations,
) -> tuple[Array, Array]:
    groups = _group_anomalies(ens, accumulated, evals)
    cov_zh = groups[0][0] @ groups[0][1].T
    cov_hh = groups[0][1] @ groups[0][1].T
    for a_z, a_h in groups[1:]:
        cov_zh = cov_zh + a_z @ a_h.T
        cov_hh = cov_hh + a_h @ a_h.T
    return cov_zh, cov_hh


def mf_gain(
    triple: TotalVariateTriple, evaluations: IndirectObservations, cov_obs_z: ArrayLike
) -> Array:
    """Empirical total-variate Kalman gain Cov(Z, Hbar) (Cov(Hbar, Hbar) + cov_obs_z)^-1.

    The control and ancillary ensembles are treated as independent.

    Raises:
        SingularInnovation: If the innovation covariance cannot be factored.
    """
    cov_zh, cov_hh = _ladder_covariances(
        LadderEnsembles.from_triple(triple), (triple.proj,), evaluations
    )
    return kalman_gain(cov_zh, cov_hh, np.atleast_2d(np.asarray(cov_obs_z, dtype=np.float64)))


def _total_mean(ens: LadderEnsembles, accumulated: Sequence[ProjectionPair]) -> Array:
    total = empirical_mean(ens.principal)
    for ell, (pair, c, a) in enumerate(zip(accumulated, ens.controls, ens.ancillaries), start=1):
        total = total - _weight(ell) * pair.lift(empirical_mean(c) - empirical_mean(a))
    return total


def total_variate_mean(triple: TotalVariateTriple) -> Array:
    """Mean(X) - 1/2 Phi (Mean(Uhat) - Mean(U)), the filter's state estimate."""
    return _total_mean(LadderEnsembles.from_triple(triple), (triple.proj,))


def telescopic_mean(ladder: FidelityLadder, ens: LadderEnsembles) -> Array:
    _check_depth(ladder, ens)
    return _total_mean(ens, ladder.accumulated)


def total_variate_ensemble(triple: TotalVariateTriple) -> Ensemble:
    """Posterior total-variate members built from the first N_x ancillary members."""
    count = triple.principal.size
    if triple.ancillary.size < count:
        raise ShapeMismatch(
            f"need at least {count} ancillary members, have {triple.ancillary.size}"
        )
    diff = triple.control.members - triple.ancillary.members[:, :count]
    return Ensemble(triple.principal.members - 0.5 * triple.proj.lift(diff))


def principal_covariance(triple: TotalVariateTriple) -> Array:
    """Principal-ensemble covariance, an upper bound on the total-variate posterior."""
    return ensemble_covariance(triple.principal)


def _finite(ens: Ensemble, what: str) -> Ensemble:
    if not np.all(np.isfinite(ens.members)):
        raise DivergedAnalysis(f"non-finite {what} analysis members")
    return ens


def _ladder_analysis(
    ens: LadderEnsembles,
    pairs: Sequence[ProjectionPair],
    obs: ObservationModel,
    y: ArrayLike,
    method: NoiseMethod,
    sampler: GaussianSampler,
    inflations: tuple[float, float],
    recentering: Recentering,
    kernel: LocalizationKernel | None,
) -> LadderEnsembles:
    accumulated = _accumulate(pairs)
    alpha_x, alpha_u = inflations
    ens = LadderEnsembles(
        inflate_ensemble(ens.principal, alpha_x),
        tuple(inflate_ensemble(c, alpha_x) for c in ens.controls),
        tuple(inflate_ensemble(a, alpha_u) for a in ens.ancillaries),
    )
    evals = _evaluate(ens, accumulated, obs)

    cov_zh, cov_hh = _ladder_covariances(ens, accumulated, evals)
    if kernel is not None:
        if obs.coordinates is None or obs.state_coordinates is None:
            raise NoGeometry("localization needs state and observation coordinates")
        cov_zh = kernel.matrix(obs.state_coordinates, obs.coordinates) * cov_zh
        cov_hh = kernel.matrix(obs.coordinates, obs.coordinates) * cov_hh
    c = noise_covariance_factor(method, ens.depth)
    gain = kalman_gain(cov_zh, cov_hh, c * obs.cov_obs)

    eta = perturb_observations(
        method, obs.cov_obs, sampler, ens.principal.size, [a.size for a in ens.ancillaries]
    )
    y = np.asarray(y, dtype=np.float64)

    a_x = anomalies(ens.principal)
    a_hx = anomalies(evals.principal)
    a_eta = anomalies(Ensemble(eta.principal))
    principal_anomalies = AnomalyMatrix(
        a_x.anomalies - gain @ (a_hx.anomalies - a_eta.anomalies)
    )
    ancillary_anomalies = []
    for pair, a, ha, eta_u in zip(accumulated, ens.ancillaries, evals.ancillaries, eta.ancillaries):
        reduced_gain = pair.restrict(gain)
        a_hu = anomalies(ha).anomalies - anomalies(Ensemble(eta_u)).anomalies
        ancillary_anomalies.append(AnomalyMatrix(anomalies(a).anomalies - reduced_gain @ a_hu))

    if recentering is Recentering.TOTAL:
        innovation = evals.mean() - y
        analysis_mean = _total_mean(ens, accumulated) - gain @ innovation
        principal_mean = analysis_mean
        ancillary_means = [pair.restrict(analysis_mean) for pair in accumulated]
    else:
        innovation = empirical_mean(evals.principal) - y
        principal_mean = empirical_mean(ens.principal) - gain @ innovation
        ancillary_means = [
            empirical_mean(a) - pair.restrict(gain) @ (empirical_mean(ha) - y)
            for pair, a, ha in zip(accumulated, ens.ancillaries, evals.ancillaries)
        ]

    principal = _finite(reassemble(principal_mean, principal_anomalies), "principal")
    ancillaries = tuple(
        _finite(reassemble(mean, a), "ancillary")
        for mean, a in zip(ancillary_means, ancillary_anomalies)
    )
    partners = (principal, *ancillaries[:-1])
    controls = tuple(
        Ensemble(pair.restrict(partner.members)) for pair, partner in zip(pairs, partners)
    )
    if recentering is Recentering.CONTROL:
        controls = tuple(
            reassemble(empirical_mean(a), anomalies(c)) if c.size > 1 else c
            for c, a in zip(controls, ancillaries)
        )
    return LadderEnsembles(principal, controls, ancillaries)


def mf_analysis(
    triple: TotalVariateTriple,
    obs: ObservationModel,
    y: ArrayLike,
    method: NoiseMethod,
    sampler: GaussianSampler,
    inflations: tuple[float, float] = (1.0, 1.0),
    recentering: Recentering = Recentering.TOTAL,
    kernel: LocalizationKernel | None = None,
) -> TotalVariateTriple:
    """Two-fidelity MFEnKF analysis.

    Principal anomalies are updated with the total-variate gain K against full-space
    innovations, ancillary anomalies with Phi* K in the reduced space, and the control
    becomes Phi* of the principal analysis. With the default recentering every mean is
    set from the analysis total-variate mean.

    Args:
        triple: Forecast triple.
        obs: Observation model with coordinates when ``kernel`` is given.
        y: Observation vector.
        method: Perturbation scheme.
        sampler: N(0, R) stream; the ancillary uses ``sampler.substream(1)``.
        inflations: (alpha_x, alpha_u) for the principal/control and ancillary ensembles.
        recentering: Total-variate or control-only mean re-centering.
        kernel: Optional Schur-product localization of the gain covariances.

    Raises:
        SingularInnovation: If the innovation covariance cannot be factored.
        DivergedAnalysis: If any analysis member is not finite.
    """
    analysis = _ladder_analysis(
        LadderEnsembles.from_triple(triple),
        (triple.proj,),
        obs,
        y,
        method,
        sampler,
        inflations,
        recentering,
        kernel,
    )
    return analysis.to_triple(triple.proj)


def telescopic_analysis(
    ladder: FidelityLadder,
    ens: LadderEnsembles,
    obs: ObservationModel,
    y: ArrayLike,
    sampler: GaussianSampler,
    method: NoiseMethod | None = None,
    inflations: tuple[float, float] = (1.0, 1.0),
    recentering: Recentering = Recentering.TOTAL,
    kernel: LocalizationKernel | None = None,
) -> LadderEnsembles:
    """Analysis over an L-level ladder; method (ii) with s = 1 unless given."""
    _check_depth(ladder, ens)
    method = method or NoiseMethod.method_ii(1.0)
    return _ladder_analysis(
        ens, ladder.pairs, obs, y, method, sampler, inflations, recentering, kernel
    )


@dataclass(frozen=True)
class CovarianceHierarchy:
    """Analytic analysis covariances of the linear-Gaussian two-fidelity system."""

    principal_optimal: Array
    total_optimal: Array
    principal_suboptimal: Array
    total_prior: Array
    gain: CvGain


def covariance_hierarchy(
    cov_prior: ArrayLike,
    proj: ProjectionPair,
    H: ArrayLike,
    cov_obs: ArrayLike,
    gain: CvGain | None = None,
) -> CovarianceHierarchy:
    """Cov(X^a(K_X)), Cov(Z^a(K_Z)) and Cov(X^a(K_Z)) from exact prior statistics.

    The control is Phi* X and the ancillary an independent copy with the same law.
    Without ``gain`` the control-variate gain is the ancillary optimum.
    """
    P = np.atleast_2d(np.asarray(cov_prior, dtype=np.float64))
    Hm = np.atleast_2d(np.asarray(H, dtype=np.float64))
    R = np.atleast_2d(np.asarray(cov_obs, dtype=np.float64))
    cov_xu = P @ proj.phi_star.T
    cov_uu = proj.phi_star @ cov_xu
    S = gain or half_gain(cov_xu, cov_uu)
    cov_z = total_variate_cov(P, cov_xu, cov_uu, cov_uu, S)

    k_x = kalman_gain(P @ Hm.T, Hm @ P @ Hm.T, R)
    k_z = kalman_gain(cov_z @ Hm.T, Hm @ cov_z @ Hm.T, R)
    return CovarianceHierarchy(
        principal_optimal=analysis_covariance(P, k_x, Hm, R),
        total_optimal=analysis_covariance(cov_z, k_z, Hm, R),
        principal_suboptimal=analysis_covariance(P, k_z, Hm, R),
        total_prior=cov_z,
        gain=S,
    )
