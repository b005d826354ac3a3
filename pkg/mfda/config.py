#!/usr/bin/env python3
"""Experiment configuration for mfda."""

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import yaml

from mfda.errors import ConfigError
from mfda.qge import DAY, SIX_MONTHS, Grid2D

FILTER_KINDS = ("enkf", "loc-enkf", "shr-enkf", "mlenkf", "mfenkf", "mfenkf-telescopic")
MULTIFIDELITY_KINDS = ("mlenkf", "mfenkf", "mfenkf-telescopic")
SCALES = ("desk", "full")

# Model settings that follow the scale unless given explicitly.
SCALED_KEYS = (
    "truth_grid",
    "fom_grid",
    "truth_spinup",
    "snapshot_count",
    "snapshot_spacing",
    "snapshot_spinup",
    "localization_radius",
)


@dataclass
class ModelConfig:
    """Model hierarchy settings."""

    scale: str = "desk"
    truth_grid: str = "127x255"
    fom_grid: str = "31x63"
    reynolds: float = 450.0
    rossby: float = 0.0036
    atol: float = 1e-6
    rtol: float = 1e-6
    truth_spinup: float = 2.0  # model time units from rest
    snapshot_count: int = 200
    snapshot_spacing: float = 0.109
    snapshot_spinup: float = 2.0
    basis_rank: int = 50
    projection_space: str = "vorticity"  # "vorticity" or "streamfunction"
    localization_radius: float = 10.0  # grid units

    @classmethod
    def for_scale(cls, scale: str) -> "ModelConfig":
        """Defaults for the desk (31x63 FOM) or full (63x127 FOM) hierarchy."""
        if scale == "desk":
            return cls()
        if scale == "full":
            return cls(
                scale="full",
                truth_grid="255x511",
                fom_grid="63x127",
                truth_spinup=10.0,
                snapshot_count=700,
                snapshot_spacing=SIX_MONTHS,
                snapshot_spinup=10.0,
                localization_radius=20.0,
            )
        raise ConfigError(f"unknown scale {scale!r}; expected one of {', '.join(SCALES)}")

    @property
    def truth(self) -> Grid2D:
        return _grid(self.truth_grid, "model.truth_grid")

    @property
    def fom(self) -> Grid2D:
        return _grid(self.fom_grid, "model.fom_grid")


@dataclass
class FilterConfig:
    """Filter kind and its ensemble settings."""

    kind: str = "mfenkf"
    n_x: int = 4
    n_u: list[int] = field(default_factory=lambda: [40])
    r: list[int] = field(default_factory=lambda: [25])
    inflation_x: float = 1.1
    inflation_u: float = 1.1
    noise_method: str | None = None  # "i" or "ii"; by kind when unset
    noise_scale: float = 1.0
    recentering: str = "total"  # "total" or "control"
    shrinkage_intensity: float | None = None  # RBLW estimate when unset
    localize_mfenkf: bool = False

    @property
    def resolved_noise_method(self) -> str:
        """Method ii for telescopic ladders, method i otherwise, unless set."""
        if self.noise_method is not None:
            return self.noise_method
        return "ii" if self.kind == "mfenkf-telescopic" else "i"


@dataclass
class RunConfig:
    """Twin experiment protocol and outputs."""

    steps: int = 350
    spinup: int = 50
    runs: int = 3
    seed: int = 0
    output: Path = field(default_factory=lambda: Path("results"))
    basis: Path | None = None
    workers: int = 1
    observation_count: int = 150
    observation_interval: float = DAY
    observation_variance: float = 1.0
    initial_spread: float = 1.0  # used only without a basis archive
    record_timing: bool = False
    checkpoint_every: int = 0


@dataclass
class SweepConfig:
    """Grid of filter/run overrides; cells are the Cartesian product of the axes."""

    axes: dict[str, list[Any]] = field(default_factory=dict)


def _grid(text: str, key: str) -> Grid2D:
    try:
        return Grid2D.parse(text)
    except ValueError as err:
        raise ConfigError(f"{key}: {err}") from err


def _section(cls: type, data: Any, name: str) -> dict[str, Any]:
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {name}: {', '.join(unknown)}")
    return dict(data)


def _as_list(value: Any) -> list[int]:
    return [int(v) for v in value] if isinstance(value, list | tuple) else [int(value)]


@dataclass
class ExperimentConfig:
    """Complete twin-experiment configuration."""

    model: ModelConfig = field(default_factory=ModelConfig)
    filter: FilterConfig = field(default_factory=FilterConfig)
    run: RunConfig = field(default_factory=RunConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)

    @classmethod
    def load(cls, path: Path | None = None) -> "ExperimentConfig":
        """Load and validate configuration from a YAML file.

        Args:
            path: Path to config file. If None, the defaults are used.

        Returns:
            ExperimentConfig instance.

        Raises:
            ConfigError: On unreadable files, unknown keys or invalid values.
        """
        if path is None:
            config = cls()
        else:
            if not path.exists():
                raise ConfigError(f"config file {path} not found")
            try:
                with open(path) as f:
                    data = yaml.safe_load(f) or {}
            except yaml.YAMLError as err:
                raise ConfigError(f"{path}: {err}") from err
            config = cls.from_dict(data, base=path.parent)
        config.validate()
        return config

    @classmethod
    def from_dict(cls, data: dict[str, Any], base: Path | None = None) -> "ExperimentConfig":
        """Build a config from parsed YAML; relative paths resolve against ``base``."""
        if not isinstance(data, dict):
            raise ConfigError("configuration must be a mapping of sections")
        unknown = sorted(set(data) - {"model", "filter", "run", "sweep"})
        if unknown:
            raise ConfigError(f"unknown section(s): {', '.join(unknown)}")

        model_data = _section(ModelConfig, data.get("model"), "model")
        model = dataclasses.replace(
            ModelConfig.for_scale(model_data.get("scale", "desk")), **model_data
        )

        filter_data = _section(FilterConfig, data.get("filter"), "filter")
        for key in ("n_u", "r"):
            if key in filter_data:
                filter_data[key] = _as_list(filter_data[key])
        filter_config = FilterConfig(**filter_data)

        run_data = _section(RunConfig, data.get("run"), "run")
        for key in ("output", "basis"):
            if run_data.get(key) is not None:
                p = Path(run_data[key]).expanduser()
                run_data[key] = base / p if base is not None and not p.is_absolute() else p
        run = RunConfig(**run_data)

        sweep_data = _section(SweepConfig, data.get("sweep"), "sweep")
        sweep = SweepConfig(axes=dict(sweep_data.get("axes") or {}))
        return cls(model, filter_config, run, sweep)

    def to_dict(self) -> dict[str, Any]:
        data: dict[str, Any] = {
            "model": dataclasses.asdict(self.model),
            "filter": dataclasses.asdict(self.filter),
            "run": dataclasses.asdict(self.run),
            "sweep": {"axes": dict(self.sweep.axes)},
        }
        data["run"]["output"] = str(self.run.output)
        data["run"]["basis"] = None if self.run.basis is None else str(self.run.basis)
        return data

    def save(self, path: Path) -> None:
        """Save configuration to a YAML file."""
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as f:
            yaml.dump(self.to_dict(), f, default_flow_style=False, sort_keys=False)

    def with_overrides(self, **overrides: Any) -> "ExperimentConfig":
        """Copy with CLI or sweep-cell overrides applied and validated.

        ``scale`` resets the scale-dependent model settings; every other key names a
        filter or run setting. ``None`` values are ignored.

        Raises:
            ConfigError: On unknown keys or invalid resulting values.
        """
        model, filter_config, run = self.model, self.filter, self.run
        filter_keys = {f.name for f in fields(FilterConfig)}
        run_keys = {f.name for f in fields(RunConfig)}
        for key, value in overrides.items():
            if value is None:
                continue
            if key == "scale":
                scaled = ModelConfig.for_scale(value)
                model = dataclasses.replace(
                    scaled,
                    **{
                        f.name: getattr(model, f.name)
                        for f in fields(ModelConfig)
                        if f.name not in (*SCALED_KEYS, "scale")
                    },
                )
            elif key in filter_keys:
                if key in ("n_u", "r"):
                    value = _as_list(value)
                filter_config = dataclasses.replace(filter_config, **{key: value})
            elif key in run_keys:
                if key in ("output", "basis"):
                    value = Path(value)
                run = dataclasses.replace(run, **{key: value})
            else:
                raise ConfigError(f"cannot override unknown setting {key!r}")
        config = dataclasses.replace(self, model=model, filter=filter_config, run=run)
        config.validate()
        return config

    @property
    def needs_basis(self) -> bool:
        """Whether the filter needs a basis archive (reduced models or snapshot targets)."""
        if self.filter.kind == "shr-enkf":
            return True
        return self.filter.kind in MULTIFIDELITY_KINDS and max(self.filter.r) > 0

    def validate(self) -> None:
        """Check value ranges and cross-setting consistency.

        Raises:
            ConfigError: Listing every problem found.
        """
        problems: list[str] = []
        m, f, r = self.model, self.filter, self.run

        if m.scale not in SCALES:
            problems.append(f"model.scale must be one of {', '.join(SCALES)}")
        try:
            truth, fom = m.truth, m.fom
        except ConfigError as err:
            problems.append(str(err))
        else:
            if (truth.nx + 1) % (fom.nx + 1) or (truth.ny + 1) % (fom.ny + 1):
                problems.append(f"truth grid {truth} does not nest FOM grid {fom}")
            if not 1 <= r.observation_count <= fom.n:
                problems.append(f"run.observation_count must lie in [1, {fom.n}]")
        if m.reynolds <= 0 or m.rossby <= 0:
            problems.append("model.reynolds and model.rossby must be positive")
        if m.atol <= 0 or m.rtol <= 0:
            problems.append("model.atol and model.rtol must be positive")
        if m.snapshot_count < 2 or m.snapshot_spacing <= 0:
            problems.append("model needs at least 2 snapshots at a positive spacing")
        if not 1 <= m.basis_rank <= m.snapshot_count:
            problems.append("model.basis_rank must lie in [1, snapshot_count]")
        if m.projection_space not in ("vorticity", "streamfunction"):
            problems.append("model.projection_space must be 'vorticity' or 'streamfunction'")
        if m.localization_radius <= 0:
            problems.append("model.localization_radius must be positive")

        if f.kind not in FILTER_KINDS:
            problems.append(f"filter.kind must be one of {', '.join(FILTER_KINDS)}")
        if f.n_x < 2:
            problems.append("filter.n_x must be at least 2")
        if f.inflation_x < 1 or f.inflation_u < 1:
            problems.append("filter inflations must be at least 1")
        if f.noise_method not in (None, "i", "ii"):
            problems.append("filter.noise_method must be 'i' or 'ii'")
        if f.noise_scale <= 0:
            problems.append("filter.noise_scale must be positive")
        if f.recentering not in ("total", "control"):
            problems.append("filter.recentering must be 'total' or 'control'")
        if f.shrinkage_intensity is not None and not 0 <= f.shrinkage_intensity <= 1:
            problems.append("filter.shrinkage_intensity must lie in [0, 1]")
        if f.kind in MULTIFIDELITY_KINDS:
            problems.extend(self._ladder_problems())

        if r.steps < 1 or not 0 <= r.spinup < r.steps:
            problems.append("run.spinup must lie in [0, steps)")
        if r.runs < 1:
            problems.append("run.runs must be at least 1")
        if r.seed < 0:
            problems.append("run.seed must be nonnegative")
        if r.workers < 1:
            problems.append("run.workers must be at least 1")
        if r.observation_interval <= 0 or r.observation_variance <= 0:
            problems.append("run.observation_interval and observation_variance must be positive")
        if r.initial_spread < 0:
            problems.append("run.initial_spread must be nonnegative")
        if r.checkpoint_every < 0:
            problems.append("run.checkpoint_every must be nonnegative")

        filter_keys = {fd.name for fd in fields(FilterConfig)}
        run_keys = {fd.name for fd in fields(RunConfig)}
        for axis, values in self.sweep.axes.items():
            if axis not in filter_keys | run_keys:
                problems.append(f"sweep axis {axis!r} is not a filter or run setting")
            elif not isinstance(values, list) or not values:
                problems.append(f"sweep axis {axis!r} needs a non-empty list of values")

        if problems:
            raise ConfigError("; ".join(problems))

    def _ladder_problems(self) -> list[str]:
        f = self.filter
        problems = []
        if len(f.r) != len(f.n_u):
            problems.append(f"filter.r has {len(f.r)} levels but filter.n_u has {len(f.n_u)}")
        if f.kind != "mfenkf-telescopic" and len(f.r) != 1:
            problems.append(f"filter kind {f.kind} takes exactly one r and one n_u")
        if any(size < 2 for size in f.n_u):
            problems.append("every filter.n_u must be at least 2")
        if any(rank < 0 for rank in f.r):
            problems.append("filter.r must be nonnegative")
        elif any(a <= b for a, b in zip(f.r, f.r[1:])):
            problems.append("telescopic filter.r must be strictly decreasing")
        if f.r and max(f.r) > self.model.basis_rank:
            problems.append("filter.r cannot exceed model.basis_rank")
        if f.kind == "mfenkf-telescopic" and len(f.r) > 1 and f.resolved_noise_method == "i":
            problems.append("noise method 'i' needs a single level; use 'ii'")
        if f.kind == "mlenkf" and f.r and f.r[0] == 0:
            problems.append("mlenkf needs r >= 1")
        return problems
