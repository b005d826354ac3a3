#!/usr/bin/env python3
"""Tests for mfda.io module."""

import math
from pathlib import Path

import numpy as np
import pytest

from mfda.errors import ConfigError, ShapeMismatch
from mfda.io import (
    METRIC_COLUMNS,
    BasisArchive,
    Checkpoint,
    export_field_csv,
    format_value,
    read_field,
    read_metrics_csv,
    write_field,
    write_metrics_csv,
)
from mfda.qge import Grid2D, QgeState


class TestFields:
    """Tests for binary field files."""

    def test_roundtrip(self, temp_dir: Path, small_grid: Grid2D) -> None:
        """Test a field and its time come back bit-identical."""
        omega = np.random.default_rng(0).standard_normal(small_grid.shape)
        path = temp_dir / "fields" / "omega.bin"
        write_field(path, QgeState(omega, t=1.25))
        state = read_field(path)
        np.testing.assert_array_equal(state.omega, omega)
        assert state.t == 1.25

    def test_truncated_payload(self, temp_dir: Path, small_grid: Grid2D) -> None:
        """Test a payload shorter than the header promises raises."""
        path = temp_dir / "omega.bin"
        write_field(path, QgeState(np.zeros(small_grid.shape)))
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(ShapeMismatch):
            read_field(path)

    def test_too_short(self, temp_dir: Path) -> None:
        """Test a file without a full header raises."""
        path = temp_dir / "omega.bin"
        path.write_bytes(b"\x00" * 4)
        with pytest.raises(ShapeMismatch):
            read_field(path)

    def test_export_csv(self, temp_dir: Path, small_grid: Grid2D) -> None:
        """Test the CSV export has one row per grid row."""
        path = temp_dir / "omega.csv"
        export_field_csv(path, QgeState(np.ones(small_grid.shape)))
        rows = path.read_text().splitlines()
        assert len(rows) == small_grid.ny
        assert len(rows[0].split(",")) == small_grid.nx


class TestBasisArchive:
    """Tests for the basis archive."""

    def test_roundtrip(self, temp_dir: Path, synthetic_archive: BasisArchive) -> None:
        """Test the ROM, snapshots and parameters survive save and load."""
        path = temp_dir / "basis.npz"
        synthetic_archive.save(path)
        loaded = BasisArchive.load(path)
        assert loaded.grid == synthetic_archive.grid
        assert loaded.rom.r == synthetic_archive.rom.r
        np.testing.assert_array_equal(loaded.rom.B, synthetic_archive.rom.B)
        np.testing.assert_array_equal(
            loaded.snapshots.snapshots, synthetic_archive.snapshots.snapshots
        )
        assert loaded.params.Re == synthetic_archive.params.Re
        assert loaded.params.Ro == synthetic_archive.params.Ro

    def test_missing(self, temp_dir: Path) -> None:
        """Test a missing archive points at build-basis."""
        with pytest.raises(ConfigError, match="build-basis"):
            BasisArchive.load(temp_dir / "nope.npz")


class TestCheckpoint:
    """Tests for resumable checkpoints."""

    def test_roundtrip(self, temp_dir: Path) -> None:
        """Test ensembles, histograms, streams and rows come back."""
        checkpoint = Checkpoint(
            step=7,
            ensembles={"principal": np.arange(6.0).reshape(3, 2)},
            histograms={"principal": np.array([1, 2, 3], dtype=np.int64)},
            streams={"perturbation": {"state": {"counter": [1, 2]}}},
            rows=[{"step": 1.0, "rmse": 0.5}],
            estimates=np.ones((2, 3)),
        )
        path = temp_dir / "run-00.checkpoint.npz"
        checkpoint.save(path)
        loaded = Checkpoint.load(path)
        assert loaded.step == 7
        np.testing.assert_array_equal(
            loaded.ensembles["principal"], checkpoint.ensembles["principal"]
        )
        np.testing.assert_array_equal(loaded.histograms["principal"], [1, 2, 3])
        assert loaded.streams == checkpoint.streams
        assert loaded.rows == checkpoint.rows
        np.testing.assert_array_equal(loaded.estimates, np.ones((2, 3)))
        assert not path.with_name(path.name + ".tmp").exists()


class TestMetricsCsv:
    """Tests for metric CSV files."""

    @pytest.mark.parametrize(
        ("value", "text"),
        [
            (0.1, "0.1"),
            (3, "3"),
            (np.int64(4), "4"),
            (math.nan, "nan"),
            (True, "true"),
            ("mean", "mean"),
            ([20, 40], "20/40"),
        ],
    )
    def test_format_value(self, value: object, text: str) -> None:
        """Test cells are written exactly and locale-free."""
        assert format_value(value) == text

    def test_float_is_repr_exact(self) -> None:
        """Test a float survives text formatting bit for bit."""
        value = 1.0 / 3.0
        assert float(format_value(value)) == value

    def test_write_read(self, temp_dir: Path) -> None:
        """Test rows come back with numbers as floats and gaps as NaN."""
        path = temp_dir / "nested" / "run-00.csv"
        write_metrics_csv(path, [{"step": 1, "time": 0.0109, "rmse": 0.25}])
        assert path.read_text().splitlines()[0] == ",".join(METRIC_COLUMNS)
        (row,) = read_metrics_csv(path)
        assert row["step"] == 1.0
        assert row["rmse"] == 0.25
        assert math.isnan(row["wall_ms"])

    def test_text_cells(self, temp_dir: Path) -> None:
        """Test non-numeric cells stay strings."""
        path = temp_dir / "summary.csv"
        write_metrics_csv(path, [{"run": "mean", "rmse": 1.5}], ["run", "rmse"])
        assert read_metrics_csv(path) == [{"run": "mean", "rmse": 1.5}]
