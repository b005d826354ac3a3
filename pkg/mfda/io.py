#!/usr/bin/env python3
"""On-disk formats: field snapshots, the basis archive, checkpoints and metric CSVs."""

import csv
import json
import logging
import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from mfda.ensemble import Array
from mfda.errors import ConfigError, ShapeMismatch
from mfda.qge import Grid2D, QgeParams, QgeState
from mfda.rom import GalerkinRom, SnapshotSet

logger = logging.getLogger(__name__)

FIELD_HEADER = np.dtype([("nx", "<i8"), ("ny", "<i8"), ("t", "<f8")])

METRIC_COLUMNS = ("step", "time", "rmse", "kl_principal", "kl_control", "kl_ancillary", "wall_ms")


def write_field(path: Path, state: QgeState) -> None:
    """Write one vorticity field: an (nx, ny, t) header then row-major float64 values."""
    path.parent.mkdir(parents=True, exist_ok=True)
    ny, nx = state.omega.shape
    header = np.array([(nx, ny, state.t)], dtype=FIELD_HEADER)
    with open(path, "wb") as f:
        f.write(header.tobytes())
        f.write(np.ascontiguousarray(state.omega, dtype="<f8").tobytes())


def read_field(path: Path) -> QgeState:
    """Read a field written by write_field.

    Raises:
        ShapeMismatch: If the payload size disagrees with the header.
    """
    raw = path.read_bytes()
    if len(raw) < FIELD_HEADER.itemsize:
        raise ShapeMismatch(f"{path} is too short for a field header")
    header = np.frombuffer(raw[: FIELD_HEADER.itemsize], dtype=FIELD_HEADER)[0]
    nx, ny, t = int(header["nx"]), int(header["ny"]), float(header["t"])
    values = np.frombuffer(raw[FIELD_HEADER.itemsize :], dtype="<f8")
    if values.size != nx * ny:
        raise ShapeMismatch(f"{path}: header says {nx}x{ny}, payload has {values.size} values")
    return QgeState(values.reshape(ny, nx).astype(np.float64), t)


def export_field_csv(path: Path, state: QgeState) -> None:
    """Write a field as a ny-row CSV for plotting."""
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, state.omega, delimiter=",", fmt="%.17g")


@dataclass(frozen=True)
class BasisArchive:
    """A POD-Galerkin ROM together with the snapshots and parameters it was built from."""

    rom: GalerkinRom
    snapshots: SnapshotSet
    params: QgeParams

    @property
    def grid(self) -> Grid2D:
        return self.rom.grid

    def save(self, path: Path) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        rom = self.rom
        with open(path, "wb") as f:
            np.savez(
                f,
                vorticity_basis=rom.vorticity_basis,
                streamfunction_basis=rom.streamfunction_basis,
                eigenvalues=rom.eigenvalues,
                b=rom.b,
                A=rom.A,
                B=rom.B,
                weights=rom.weights,
                snapshots=self.snapshots.snapshots,
                times=self.snapshots.times,
                grid=np.array([rom.grid.nx, rom.grid.ny], dtype=np.int64),
                reynolds_rossby=np.array([self.params.Re, self.params.Ro]),
                beta_effect=np.array(self.params.beta_effect),
            )
        logger.info("wrote %d-mode basis archive to %s", rom.r, path)

    @classmethod
    def load(cls, path: Path) -> "BasisArchive":
        """Read an archive written by save.

        Raises:
            ConfigError: If the file does not exist.
        """
        if not path.exists():
            raise ConfigError(f"basis archive {path} not found; run 'mfda build-basis' first")
        with np.load(path) as data:
            nx, ny = (int(v) for v in data["grid"])
            grid = Grid2D(nx, ny)
            re, ro = (float(v) for v in data["reynolds_rossby"])
            params = QgeParams(Re=re, Ro=ro, beta_effect=bool(data["beta_effect"]))
            basis = np.array(data["vorticity_basis"])
            rom = GalerkinRom(
                r=basis.shape[1],
                vorticity_basis=basis,
                streamfunction_basis=np.array(data["streamfunction_basis"]),
                b=np.array(data["b"]),
                A=np.array(data["A"]),
                B=np.array(data["B"]),
                eigenvalues=np.array(data["eigenvalues"]),
                weights=np.array(data["weights"]),
                grid=grid,
            )
            snapshots = SnapshotSet(
                np.array(data["snapshots"]), np.array(data["times"]), rom.weights, grid
            )
        return cls(rom, snapshots, params)


@dataclass
class Checkpoint:
    """Filter ensembles and random-stream states after ``step`` completed cycles."""

    step: int
    ensembles: dict[str, Array] = field(default_factory=dict)
    histograms: dict[str, Array] = field(default_factory=dict)
    streams: dict[str, Any] = field(default_factory=dict)
    rows: list[dict[str, float]] = field(default_factory=list)
    estimates: Array = field(default_factory=lambda: np.zeros((0, 0)))

    def save(self, path: Path) -> None:
        """Write atomically: a partial file never replaces a good checkpoint."""
        path.parent.mkdir(parents=True, exist_ok=True)
        meta = {"step": self.step, "streams": self.streams, "rows": self.rows}
        arrays = {f"ensemble_{name}": members for name, members in self.ensembles.items()}
        arrays |= {f"histogram_{name}": counts for name, counts in self.histograms.items()}
        tmp = path.with_name(path.name + ".tmp")
        with open(tmp, "wb") as f:
            np.savez(f, meta=np.array(json.dumps(meta)), estimates=self.estimates, **arrays)
        tmp.replace(path)

    @classmethod
    def load(cls, path: Path) -> "Checkpoint":
        with np.load(path) as data:
            meta = json.loads(str(data["meta"]))

            def prefixed(prefix: str) -> dict[str, Array]:
                return {
                    key.removeprefix(prefix): np.array(data[key])
                    for key in data.files
                    if key.startswith(prefix)
                }

            return cls(
                step=int(meta["step"]),
                ensembles=prefixed("ensemble_"),
                histograms=prefixed("histogram_"),
                streams=meta["streams"],
                rows=meta["rows"],
                estimates=np.array(data["estimates"]),
            )


def format_value(value: Any) -> str:
    """Exact, locale-independent text for a CSV cell."""
    if isinstance(value, str):
        return value
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, list | tuple):
        return "/".join(format_value(v) for v in value)
    if isinstance(value, int | np.integer):
        return str(int(value))
    number = float(value)
    return "nan" if math.isnan(number) else repr(number)


def write_metrics_csv(
    path: Path,
    rows: Iterable[Mapping[str, Any]],
    columns: Sequence[str] = METRIC_COLUMNS,
) -> None:
    """Write rows under a header; numbers are written repr-exact, missing cells empty."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([format_value(row[c]) if c in row else "" for c in columns])


def _parse_cell(text: str) -> Any:
    if not text:
        return math.nan
    try:
        return float(text)
    except ValueError:
        return text


def read_metrics_csv(path: Path) -> list[dict[str, Any]]:
    """Rows of a CSV written by write_metrics_csv; numeric cells come back as floats."""
    with open(path, newline="") as f:
        return [
            {key: _parse_cell(value) for key, value in row.items()} for row in csv.DictReader(f)
        ]
