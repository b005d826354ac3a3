#!/usr/bin/env python3
"""Pytest configuration and fixtures."""

import tempfile
from collections.abc import Generator
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from mfda.config import ExperimentConfig
from mfda.enkf import ObservationModel
from mfda.ensemble import Array, GaussianSampler
from mfda.io import BasisArchive
from mfda.qge import Grid2D, QgeParams
from mfda.rom import SnapshotSet, build_rom, simpson_weights

# Nested tiny hierarchy: (15+1) / (7+1) = (31+1) / (15+1) = 2.
TINY_TRUTH = "15x31"
TINY_FOM = "7x15"


@pytest.fixture
def cli_runner() -> CliRunner:
    """Create a Click CLI test runner."""
    return CliRunner()


@pytest.fixture
def temp_dir() -> Generator[Path, None, None]:
    """Create a temporary directory for tests."""
    with tempfile.TemporaryDirectory() as tmpdir:
        yield Path(tmpdir)


@pytest.fixture
def rng() -> np.random.Generator:
    """Seeded generator for test data."""
    return np.random.default_rng(20240611)


@pytest.fixture
def small_grid() -> Grid2D:
    """A 7x15 grid, the smallest that nests under 15x31."""
    return Grid2D(7, 15)


@pytest.fixture
def gaussian_prior(rng: np.random.Generator) -> tuple[Array, Array]:
    """Mean and SPD covariance of a 6-variable linear-Gaussian toy."""
    n = 6
    root = rng.standard_normal((n, n))
    cov = root @ root.T / n + 0.5 * np.eye(n)
    return rng.standard_normal(n), cov


@pytest.fixture
def toy_obs() -> ObservationModel:
    """Observe variables 0, 2 and 4 of a 6-variable state with unit error variance."""
    return ObservationModel.gather([0, 2, 4], 6, np.eye(3))


@pytest.fixture
def obs_sampler() -> GaussianSampler:
    """N(0, I_3) observation perturbations."""
    return GaussianSampler(seed=7, factor=np.eye(3))


@pytest.fixture
def synthetic_archive(small_grid: Grid2D, rng: np.random.Generator) -> BasisArchive:
    """Six-mode basis built from smooth random fields on the small grid."""
    x, y = small_grid.mesh()
    fields = []
    # 12 distinct discrete sine modes, so the snapshot set has full rank
    for kx in range(1, 5):
        for ky in range(1, 4):
            amplitude = 1.0 + rng.random()
            fields.append(amplitude * np.sin(np.pi * kx * x) * np.sin(np.pi * ky * y / 2.0))
    snapshots = SnapshotSet(
        np.column_stack([f.reshape(-1) for f in fields]),
        np.arange(12, dtype=float),
        simpson_weights(small_grid),
        small_grid,
    )
    params = QgeParams()
    rom = build_rom(snapshots, 6, params)
    return BasisArchive(rom, snapshots, params)


@pytest.fixture
def tiny_config(temp_dir: Path) -> ExperimentConfig:
    """A twin experiment that runs in seconds: tiny grids, short spinup, few steps."""
    config = ExperimentConfig.from_dict(
        {
            "model": {
                "truth_grid": TINY_TRUTH,
                "fom_grid": TINY_FOM,
                "truth_spinup": 0.02,
                "snapshot_count": 12,
                "snapshot_spacing": 0.01,
                "snapshot_spinup": 0.02,
                "basis_rank": 6,
                "localization_radius": 2.0,
            },
            "filter": {"kind": "enkf", "n_x": 4, "n_u": [6], "r": [0]},
            "run": {
                "steps": 4,
                "spinup": 1,
                "runs": 2,
                "seed": 3,
                "output": str(temp_dir / "results"),
                "observation_count": 10,
            },
        }
    )
    config.validate()
    return config
