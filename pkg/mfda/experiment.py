#!/usr/bin/env python3
"""Twin experiments: a shared truth run, filter cycling, metrics and parameter sweeps.

One truth trajectory is generated per master seed and shared by every run and sweep
cell; runs differ only in their filter seeds.
"""

import dataclasses
import itertools
import logging
import math
import time
from collections.abc import Callable, Iterator
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
from joblib import Parallel, delayed

from mfda.config import MULTIFIDELITY_KINDS, ExperimentConfig
from mfda.diagnostics import RankHistogram, rmse, spatiotemporal_rmse
from mfda.enkf import (
    FilterState,
    LocalizationKernel,
    ObservationModel,
    enkf_analysis,
    localized_enkf_analysis,
    localized_target,
    mlenkf_corrected_analysis,
    shrinkage_enkf_analysis,
)
from mfda.ensemble import Array, Ensemble, GaussianSampler, empirical_mean
from mfda.errors import ConfigError, MfdaError
from mfda.integrate import StepController
from mfda.io import METRIC_COLUMNS, BasisArchive, Checkpoint, write_metrics_csv
from mfda.mfenkf import (
    FidelityLadder,
    FidelityLevel,
    LadderEnsembles,
    NoiseMethod,
    Propagator,
    Recentering,
    mf_analysis,
    mf_forecast,
    propagate,
    telescopic_analysis,
    telescopic_forecast,
    telescopic_mean,
    total_variate_mean,
)
from mfda.projection import ProjectionPair
from mfda.qge import (
    QgeModel,
    QgeParams,
    equally_spaced_indices,
    grid_coordinates,
    observe,
    restrict_to_fom,
)
from mfda.rom import RomModel, build_projection_pair, truncate

logger = logging.getLogger(__name__)

# Spawn-key tags of the random streams derived from a seed.
TRUTH_STREAM = 0
RUN_STREAM = 1
INITIAL_STREAM = 2
PERTURBATION_STREAM = 3

ENSEMBLE_NAMES = ("principal", "control", "ancillary")
SUMMARY_COLUMNS = ("run", "seed", "rmse", "kl_principal", "kl_control", "kl_ancillary")

# Settings that change the truth run or its observations.
TRUTH_KEYS = (
    "steps",
    "observation_count",
    "observation_interval",
    "observation_variance",
)

ProgressCallback = Callable[[int, int], None]


def _seed_state(seq: np.random.SeedSequence) -> int:
    return int(seq.generate_state(1, np.uint64)[0])


def run_seed(master: int, run: int) -> int:
    """Filter seed of run ``run`` under a master seed."""
    return _seed_state(np.random.SeedSequence(master, spawn_key=(RUN_STREAM, run)))


def cell_seed(master: int, index: int) -> int:
    """Master seed of sweep cell ``index``."""
    return _seed_state(np.random.SeedSequence([master, index]))


def _stream_generator(seed: int, *key: int) -> np.random.Generator:
    return GaussianSampler(seed=seed, dim=0, spawn_key=key).generator


@dataclass(frozen=True)
class Truth:
    """Restricted truth at every observation time and its noisy observations."""

    initial: Array  # FOM-grid truth when assimilation starts
    states: Array  # steps x n
    observations: Array  # steps x m
    times: Array  # steps, measured from the start of assimilation
    indices: Array

    @property
    def steps(self) -> int:
        return int(self.states.shape[0])

    def observed(self, step: int) -> Array:
        """Noise-free truth at the observed points."""
        return self.states[step, self.indices]


def _params(cfg: ExperimentConfig) -> QgeParams:
    return QgeParams(Re=cfg.model.reynolds, Ro=cfg.model.rossby)


def _controller(cfg: ExperimentConfig) -> StepController:
    return StepController(atol=cfg.model.atol, rtol=cfg.model.rtol)


def generate_truth(
    cfg: ExperimentConfig, progress: ProgressCallback | None = None
) -> Truth:
    """Spin up the fine-grid truth, then restrict and observe it every observation interval.

    Observation noise is drawn from the master seed, so every run of a config sees the
    same observations.

    Raises:
        NumericalDivergence: If the truth run blows up.
    """
    truth_grid, fom_grid = cfg.model.truth, cfg.model.fom
    run = cfg.run
    dns = QgeModel(truth_grid, _params(cfg), _controller(cfg))
    state = dns.free_run(cfg.model.truth_spinup)
    t0 = state.t

    indices = equally_spaced_indices(fom_grid.n, run.observation_count)
    noise = GaussianSampler(
        seed=run.seed,
        factor=math.sqrt(run.observation_variance) * np.eye(indices.size),
        spawn_key=(TRUTH_STREAM,),
    )
    initial = restrict_to_fom(state, truth_grid, fom_grid).vector.copy()
    states, observations, times = [], [], []
    for step in range(run.steps):
        try:
            state = dns.step(state, run.observation_interval)
        except MfdaError as err:
            err.add_note(f"while generating the truth at step {step + 1}")
            raise
        restricted = restrict_to_fom(state, truth_grid, fom_grid)
        states.append(restricted.vector.copy())
        observations.append(observe(restricted, indices, noise))
        times.append(state.t - t0)
        if progress is not None:
            progress(step + 1, run.steps)
    logger.info("generated %d truth steps on %s, observed on %s", run.steps, truth_grid, fom_grid)
    return Truth(
        initial=initial,
        states=np.array(states),
        observations=np.array(observations),
        times=np.array(times),
        indices=indices,
    )


def _identity(state: Array) -> Array:
    return state


@dataclass
class ExperimentSetup:
    """Everything the runs of one configuration share."""

    cfg: ExperimentConfig
    truth: Truth
    obs: ObservationModel
    fom: Propagator
    kernel: LocalizationKernel
    archive: BasisArchive | None = None
    ladder: FidelityLadder | None = None
    target: Array | None = None

    @property
    def n(self) -> int:
        return int(self.truth.initial.size)


def load_archive(cfg: ExperimentConfig) -> BasisArchive | None:
    """Basis archive the config refers to, if it needs or names one.

    Raises:
        ConfigError: If the archive is missing or does not match the FOM grid.
    """
    if cfg.run.basis is None:
        if cfg.needs_basis:
            raise ConfigError(f"filter {cfg.filter.kind} needs run.basis (a basis archive)")
        return None
    archive = BasisArchive.load(cfg.run.basis)
    if archive.grid != cfg.model.fom:
        raise ConfigError(f"basis archive is on {archive.grid}, FOM grid is {cfg.model.fom}")
    if archive.params.Re != cfg.model.reynolds or archive.params.Ro != cfg.model.rossby:
        params = archive.params
        logger.warning("basis archive was built with Re=%g, Ro=%g", params.Re, params.Ro)
    return archive


def build_ladder(
    cfg: ExperimentConfig, archive: BasisArchive | None, n: int
) -> FidelityLadder:
    """Nested ROM levels r_1 > r_2 > ... of one basis; a zero rank gives an empty level.

    Raises:
        ConfigError: If a rank exceeds the archived basis.
    """
    f = cfg.filter
    interval = cfg.run.observation_interval
    levels = []
    previous = n
    for ell, (rank, n_u) in enumerate(zip(f.r, f.n_u)):
        if rank == 0:
            levels.append(FidelityLevel(ProjectionPair.empty(previous), _identity, n_u))
            previous = 0
            continue
        if archive is None or rank > archive.rom.r:
            available = 0 if archive is None else archive.rom.r
            raise ConfigError(
                f"r={rank} needs a basis archive with at least {rank} modes, have {available}"
            )
        reduced = truncate(archive.rom, rank)
        if ell == 0:
            pair = build_projection_pair(reduced, cfg.model.projection_space)
        else:
            pair = ProjectionPair.identity_truncation(previous, rank)
        model = RomModel(reduced, _controller(cfg)).propagator(interval)
        levels.append(FidelityLevel(pair, model, n_u))
        previous = rank
    return FidelityLadder(tuple(levels))


def prepare(
    cfg: ExperimentConfig,
    truth: Truth | None = None,
    archive: BasisArchive | None = None,
) -> ExperimentSetup:
    """Generate (or reuse) the truth and build the observation model, FOM and ladder."""
    archive = archive if archive is not None else load_archive(cfg)
    truth = truth if truth is not None else generate_truth(cfg)
    fom_grid = cfg.model.fom
    coordinates = grid_coordinates(fom_grid)
    variance = cfg.run.observation_variance
    obs = ObservationModel.gather(
        truth.indices,
        fom_grid.n,
        variance * np.eye(truth.indices.size),
        state_coordinates=coordinates,
    )
    fom = QgeModel(fom_grid, _params(cfg), _controller(cfg)).propagator(
        cfg.run.observation_interval
    )
    kernel = LocalizationKernel(cfg.model.localization_radius)
    setup = ExperimentSetup(cfg, truth, obs, fom, kernel, archive)
    if cfg.filter.kind in MULTIFIDELITY_KINDS:
        setup.ladder = build_ladder(cfg, archive, fom_grid.n)
    if cfg.filter.kind == "shr-enkf":
        assert archive is not None
        setup.target = localized_target(archive.snapshots.snapshots, kernel, coordinates)
    return setup


def _initial_members(
    setup: ExperimentSetup, rng: np.random.Generator, count: int
) -> Array:
    """Climatological draws from the archived snapshots, or a perturbed truth without one."""
    if setup.archive is not None:
        snapshots = setup.archive.snapshots.snapshots
        available = snapshots.shape[1]
        columns = rng.choice(available, size=count, replace=count > available)
        return np.array(snapshots[:, columns])
    spread = setup.cfg.run.initial_spread
    return setup.truth.initial[:, None] + spread * rng.standard_normal((setup.n, count))


class Filter:
    """One run's ensembles, advanced one assimilation cycle at a time."""

    label = "filter"

    def forecast(self, n_jobs: int) -> None:
        raise NotImplementedError

    def analyze(self, y: Array) -> None:
        raise NotImplementedError

    def estimate(self) -> Array:
        raise NotImplementedError

    def observed(self) -> dict[str, Array]:
        """Observation-space values (m x N) of every ensemble, keyed by role."""
        raise NotImplementedError

    def arrays(self) -> dict[str, Array]:
        raise NotImplementedError

    def restore(self, arrays: dict[str, Array]) -> None:
        raise NotImplementedError


class SingleFidelityFilter(Filter):
    """EnKF, localized EnKF or shrinkage EnKF on the FOM ensemble."""

    def __init__(
        self, setup: ExperimentSetup, sampler: GaussianSampler, members: Array
    ) -> None:
        self.setup = setup
        self.sampler = sampler
        self.label = setup.cfg.filter.kind
        self.state = FilterState(Ensemble(members), 0, setup.cfg.filter.inflation_x)

    def forecast(self, n_jobs: int) -> None:
        forecast = propagate(self.state.ensemble, self.setup.fom, n_jobs)
        self.state = dataclasses.replace(self.state, ensemble=forecast)

    def analyze(self, y: Array) -> None:
        setup, prior, alpha = self.setup, self.state.ensemble, self.state.alpha
        if self.label == "enkf":
            posterior = enkf_analysis(prior, setup.obs, y, self.sampler, alpha)
        elif self.label == "loc-enkf":
            posterior = localized_enkf_analysis(
                prior, setup.obs, y, self.sampler, setup.kernel, alpha
            )
        else:
            assert setup.target is not None
            posterior = shrinkage_enkf_analysis(
                prior,
                setup.obs,
                y,
                self.sampler,
                setup.target,
                alpha,
                setup.cfg.filter.shrinkage_intensity,
            )
        self.state = FilterState(posterior, self.state.step + 1, alpha)

    def estimate(self) -> Array:
        return empirical_mean(self.state.ensemble)

    def observed(self) -> dict[str, Array]:
        return {"principal": self.setup.obs.apply(self.state.ensemble.members)}

    def arrays(self) -> dict[str, Array]:
        return {"principal": self.state.ensemble.members}

    def restore(self, arrays: dict[str, Array]) -> None:
        self.state = dataclasses.replace(self.state, ensemble=Ensemble(arrays["principal"]))


class LadderFilter(Filter):
    """MFEnKF (two-fidelity or telescopic) or corrected-MLEnKF over a fidelity ladder."""

    def __init__(
        self,
        setup: ExperimentSetup,
        sampler: GaussianSampler,
        ensembles: LadderEnsembles,
    ) -> None:
        assert setup.ladder is not None
        self.setup = setup
        self.ladder = setup.ladder
        self.sampler = sampler
        self.ens = ensembles
        f = setup.cfg.filter
        self.kind = f.kind
        self.label = "corrected-MLEnKF" if f.kind == "mlenkf" else f.kind
        self.inflations = (f.inflation_x, f.inflation_u)
        self.method = NoiseMethod(f.resolved_noise_method, f.noise_scale)
        self.recentering = Recentering(f.recentering)
        self.kernel = setup.kernel if f.localize_mfenkf else None

    @property
    def proj(self) -> ProjectionPair:
        return self.ladder.pairs[0]

    def forecast(self, n_jobs: int) -> None:
        if self.kind == "mfenkf-telescopic":
            self.ens = telescopic_forecast(self.ladder, self.ens, self.setup.fom, n_jobs)
            return
        triple = self.ens.to_triple(self.proj)
        forecast = mf_forecast(triple, self.setup.fom, self.ladder.models[0], n_jobs)
        self.ens = LadderEnsembles.from_triple(forecast)

    def analyze(self, y: Array) -> None:
        obs = self.setup.obs
        if self.kind == "mfenkf-telescopic":
            self.ens = telescopic_analysis(
                self.ladder,
                self.ens,
                obs,
                y,
                self.sampler,
                self.method,
                self.inflations,
                self.recentering,
                self.kernel,
            )
            return
        triple = self.ens.to_triple(self.proj)
        if self.kind == "mlenkf":
            posterior = mlenkf_corrected_analysis(
                triple, obs, y, self.sampler, self.setup.kernel, self.inflations
            )
        else:
            posterior = mf_analysis(
                triple,
                obs,
                y,
                self.method,
                self.sampler,
                self.inflations,
                self.recentering,
                self.kernel,
            )
        self.ens = LadderEnsembles.from_triple(posterior)

    def estimate(self) -> Array:
        if self.kind == "mfenkf-telescopic":
            return telescopic_mean(self.ladder, self.ens)
        if self.kind == "mlenkf":
            return empirical_mean(self.ens.principal)
        return total_variate_mean(self.ens.to_triple(self.proj))

    def observed(self) -> dict[str, Array]:
        obs = self.setup.obs
        values = {"principal": obs.apply(self.ens.principal.members)}
        if self.proj.r:
            lift = self.proj.lift
            values["control"] = obs.apply(lift(self.ens.controls[0].members))
            values["ancillary"] = obs.apply(lift(self.ens.ancillaries[0].members))
        return values

    def arrays(self) -> dict[str, Array]:
        arrays = {"principal": self.ens.principal.members}
        for ell, (c, a) in enumerate(zip(self.ens.controls, self.ens.ancillaries), start=1):
            arrays[f"control_{ell}"] = c.members
            arrays[f"ancillary_{ell}"] = a.members
        return arrays

    def restore(self, arrays: dict[str, Array]) -> None:
        depth = self.ladder.depth
        self.ens = LadderEnsembles(
            Ensemble(arrays["principal"]),
            tuple(Ensemble(arrays[f"control_{ell}"]) for ell in range(1, depth + 1)),
            tuple(Ensemble(arrays[f"ancillary_{ell}"]) for ell in range(1, depth + 1)),
        )


def build_filter(setup: ExperimentSetup, seed: int) -> Filter:
    """Filter with its initial ensembles and perturbation sampler for one run seed.

    The principal ensemble and the perturbation stream depend only on the seed and
    N_x, so every filter kind starts from the same principal members.
    """
    cfg = setup.cfg
    m = setup.truth.indices.size
    sampler = GaussianSampler(
        seed=seed,
        factor=math.sqrt(cfg.run.observation_variance) * np.eye(m),
        spawn_key=(PERTURBATION_STREAM,),
    )
    principal = _initial_members(setup, _stream_generator(seed, INITIAL_STREAM, 0), cfg.filter.n_x)
    if setup.ladder is None:
        return SingleFidelityFilter(setup, sampler, principal)

    controls, ancillaries = [], []
    partner = principal
    for ell, (level, pair) in enumerate(
        zip(setup.ladder.levels, setup.ladder.accumulated), start=1
    ):
        controls.append(Ensemble(level.pair.restrict(partner)))
        full = _initial_members(setup, _stream_generator(seed, INITIAL_STREAM, ell), level.n_u)
        ancillaries.append(Ensemble(pair.restrict(full)))
        partner = ancillaries[-1].members
    ensembles = LadderEnsembles(Ensemble(principal), tuple(controls), tuple(ancillaries))
    return LadderFilter(setup, sampler, ensembles)


@dataclass
class RunResult:
    """Per-step metrics of one filter run."""

    index: int
    seed: int
    rows: list[dict[str, float]]
    rmse: float
    histograms: dict[str, Array]
    path: Path | None = None

    def kl(self, name: str) -> float:
        counts = self.histograms.get(name)
        if counts is None:
            return math.nan
        histogram = RankHistogram(counts.size - 1)
        histogram.counts = counts.astype(np.int64)
        return histogram.kl_to_uniform()


@dataclass
class ExperimentResult:
    """All runs of one configuration and their aggregate."""

    config: ExperimentConfig
    label: str
    runs: list[RunResult] = field(default_factory=list)
    summary_path: Path | None = None

    @property
    def mean_rmse(self) -> float:
        return float(np.mean([r.rmse for r in self.runs]))

    def summary_rows(self) -> list[dict[str, Any]]:
        rows: list[dict[str, Any]] = [
            {"run": r.index, "seed": r.seed, "rmse": r.rmse}
            | {f"kl_{name}": r.kl(name) for name in ENSEMBLE_NAMES}
            for r in self.runs
        ]
        mean = {"run": "mean", "seed": self.config.run.seed, "rmse": self.mean_rmse}
        for name in ENSEMBLE_NAMES:
            mean[f"kl_{name}"] = float(np.mean([row[f"kl_{name}"] for row in rows]))
        return [*rows, mean]


def _step_row(
    step: int,
    truth: Truth,
    estimate: Array,
    forecast_values: dict[str, Array],
    seed: int,
    wall_ms: float,
) -> tuple[dict[str, float], dict[str, Array]]:
    """Metric row of one cycle and the rank counts of its forecast ensembles."""
    row: dict[str, float] = {
        "step": step + 1,
        "time": float(truth.times[step]),
        "rmse": rmse(estimate, truth.states[step]),
    }
    counts = {}
    for name in ENSEMBLE_NAMES:
        values = forecast_values.get(name)
        if values is None:
            row[f"kl_{name}"] = math.nan
            continue
        histogram = RankHistogram(values.shape[1], seed=(seed + step) % 2**64)
        histogram.add_ensemble(values, truth.observed(step))
        row[f"kl_{name}"] = histogram.kl_to_uniform()
        counts[name] = histogram.counts
    row["wall_ms"] = wall_ms
    return row, counts


def run_filter(
    setup: ExperimentSetup,
    index: int,
    seed: int,
    checkpoint: Path | None = None,
    progress: ProgressCallback | None = None,
) -> RunResult:
    """Cycle one filter through every observation step.

    With ``checkpoint`` set and ``checkpoint_every`` > 0 the state is saved every that
    many steps and a run resumes from an existing checkpoint file.

    Raises:
        NumericalDivergence: With the failing step noted.
    """
    cfg, truth = setup.cfg, setup.truth
    flt = build_filter(setup, seed)
    rows: list[dict[str, float]] = []
    histograms: dict[str, Array] = {}
    estimates = np.zeros((truth.steps, setup.n))
    start = 0
    every = cfg.run.checkpoint_every
    if checkpoint is not None and every and checkpoint.exists():
        saved = Checkpoint.load(checkpoint)
        flt.restore(saved.ensembles)
        flt.sampler.set_state(saved.streams["perturbation"])
        rows, histograms, start = saved.rows, saved.histograms, saved.step
        estimates[:start] = saved.estimates[:start]
        logger.info("resuming run %d of %s at step %d", index, flt.label, start)

    for step in range(start, truth.steps):
        began = time.perf_counter()
        try:
            flt.forecast(cfg.run.workers)
            forecast_values = flt.observed()
            flt.analyze(truth.observations[step])
            estimates[step] = flt.estimate()
        except MfdaError as err:
            err.add_note(f"{flt.label} run {index} at assimilation step {step + 1}")
            raise
        wall_ms = (time.perf_counter() - began) * 1e3 if cfg.run.record_timing else 0.0
        row, counts = _step_row(step, truth, estimates[step], forecast_values, seed, wall_ms)
        rows.append(row)
        if step >= cfg.run.spinup:
            for name, c in counts.items():
                histograms[name] = histograms.get(name, np.zeros_like(c)) + c
        logger.debug("%s run %d step %d rmse %.4g", flt.label, index, step + 1, row["rmse"])

        if checkpoint is not None and every and (step + 1) % every == 0:
            Checkpoint(
                step + 1,
                flt.arrays(),
                histograms,
                {"perturbation": flt.sampler.get_state()},
                rows,
                estimates,
            ).save(checkpoint)
        if progress is not None:
            progress(step + 1, truth.steps)

    score = spatiotemporal_rmse(estimates, truth.states, cfg.run.spinup)
    if checkpoint is not None and checkpoint.exists():
        checkpoint.unlink()
    return RunResult(index, seed, rows, score, histograms)


def run_twin_experiment(
    cfg: ExperimentConfig,
    truth: Truth | None = None,
    archive: BasisArchive | None = None,
    progress: ProgressCallback | None = None,
) -> ExperimentResult:
    """Run ``cfg.run.runs`` seeded filter runs against one truth and write their CSVs.

    Writes ``run-NN.csv`` per run and ``summary.csv`` under ``cfg.run.output``.

    Raises:
        ConfigError: If the basis archive is missing or inconsistent.
        NumericalDivergence: If the truth or a filter run diverges.
    """
    setup = prepare(cfg, truth, archive)
    output = cfg.run.output
    result = ExperimentResult(cfg, cfg.filter.kind)
    for index in range(cfg.run.runs):
        seed = run_seed(cfg.run.seed, index)
        checkpoint = output / f"run-{index:02d}.checkpoint.npz"
        logger.info("%s run %d/%d (seed %d)", cfg.filter.kind, index + 1, cfg.run.runs, seed)
        run = run_filter(setup, index, seed, checkpoint, progress)
        run.path = output / f"run-{index:02d}.csv"
        write_metrics_csv(run.path, run.rows, METRIC_COLUMNS)
        result.runs.append(run)
    result.summary_path = output / "summary.csv"
    write_metrics_csv(result.summary_path, result.summary_rows(), SUMMARY_COLUMNS)
    return result


@dataclass
class SweepCell:
    """One grid point of a sweep."""

    index: int
    overrides: dict[str, Any]
    seed: int
    output: Path
    status: str = "pending"
    rmse: float = math.nan
    error: str | None = None


@dataclass
class SweepResult:
    """Cells in row-major axis order and the aggregate file."""

    axes: dict[str, list[Any]]
    cells: list[SweepCell]
    aggregate_path: Path | None = None

    @property
    def failed(self) -> list[SweepCell]:
        return [c for c in self.cells if c.status != "ok"]

    def matrix(self) -> Array:
        """Mean RMSE per cell shaped by the axis lengths; failed cells are NaN."""
        shape = tuple(len(values) for values in self.axes.values())
        return np.array([c.rmse for c in self.cells]).reshape(shape)


def sweep_cells(cfg: ExperimentConfig) -> Iterator[SweepCell]:
    """Cartesian product of the sweep axes, in order, with derived seeds."""
    names = list(cfg.sweep.axes)
    for index, values in enumerate(itertools.product(*cfg.sweep.axes.values())):
        yield SweepCell(
            index=index,
            overrides=dict(zip(names, values)),
            seed=cell_seed(cfg.run.seed, index),
            output=cfg.run.output / f"cell-{index:03d}",
        )


def _truth_key(cfg: ExperimentConfig) -> tuple[Any, ...]:
    return tuple(getattr(cfg.run, key) for key in TRUTH_KEYS)


def _truth_overrides(cell: SweepCell) -> dict[str, Any]:
    return {k: v for k, v in cell.overrides.items() if k in TRUTH_KEYS}


def _run_cell(
    cfg: ExperimentConfig,
    cell: SweepCell,
    truth: Truth,
    archive: BasisArchive | None,
) -> SweepCell:
    overrides = cell.overrides | {"seed": cell.seed, "output": cell.output, "workers": 1}
    try:
        result = run_twin_experiment(cfg.with_overrides(**overrides), truth, archive)
    except MfdaError as err:
        notes = " ".join(getattr(err, "__notes__", []))
        logger.warning("sweep cell %d failed: %s %s", cell.index, err, notes)
        return _failed(cell, err)
    return dataclasses.replace(cell, status="ok", rmse=result.mean_rmse)


def _failed(cell: SweepCell, err: Exception) -> SweepCell:
    return dataclasses.replace(cell, status="failed", error=f"{type(err).__name__}: {err}")


def sweep(cfg: ExperimentConfig, workers: int | None = None) -> SweepResult:
    """Run every sweep cell, in parallel processes, and write the aggregate CSV.

    Cells share one truth per distinct set of observation settings, generated under
    the master seed. A failing cell is recorded and the sweep continues.

    Raises:
        ConfigError: If the sweep has no axes or its basis archive is unusable.
    """
    if not cfg.sweep.axes:
        raise ConfigError("sweep needs at least one axis under sweep.axes")
    archive = load_archive(cfg) if cfg.run.basis is not None else None

    truths: dict[tuple[Any, ...], Truth] = {}
    finished: list[SweepCell] = []
    pending: list[tuple[SweepCell, Truth]] = []
    for cell in sweep_cells(cfg):
        try:
            truth_cfg = cfg.with_overrides(**_truth_overrides(cell))
        except ConfigError as err:
            finished.append(_failed(cell, err))
            continue
        key = _truth_key(truth_cfg)
        if key not in truths:
            truths[key] = generate_truth(truth_cfg)
        pending.append((cell, truths[key]))

    n_jobs = workers or cfg.run.workers
    logger.info("sweeping %d cells on %d workers", len(pending) + len(finished), n_jobs)
    finished.extend(
        Parallel(n_jobs=n_jobs)(
            delayed(_run_cell)(cfg, cell, truth, archive) for cell, truth in pending
        )
    )
    result = SweepResult(dict(cfg.sweep.axes), sorted(finished, key=lambda c: c.index))
    result.aggregate_path = cfg.run.output / "sweep.csv"
    columns = ("cell", "seed", *cfg.sweep.axes, "status", "rmse", "error")
    rows = [
        {"cell": c.index, "seed": c.seed, "status": c.status, "rmse": c.rmse}
        | c.overrides
        | ({"error": c.error} if c.error else {})
        for c in result.cells
    ]
    write_metrics_csv(result.aggregate_path, rows, columns)
    return result
