#!/usr/bin/env python3
"""mfda build-basis command - snapshots, POD basis and Galerkin ROM."""

from pathlib import Path
from typing import Any

import click
from rich.console import Console
from rich.table import Table

from mfda.commands import experiment_options, fail, load_config, progress_bar
from mfda.config import ExperimentConfig
from mfda.errors import MfdaError
from mfda.integrate import StepController
from mfda.io import BasisArchive
from mfda.qge import QgeModel, QgeParams
from mfda.rom import build_rom, collect_snapshots, relative_kinetic_energy

console = Console()

REPORTED_RANKS = (5, 10, 12, 25, 50, 100)


@click.command("build-basis")
@experiment_options
@click.option(
    "--archive",
    type=click.Path(dir_okay=False, path_type=Path),
    default=None,
    help="Where to write the archive (default: run.basis or <output-dir>/basis.npz).",
)
@click.pass_context
def build_basis(
    ctx: click.Context,
    config_path: Path | None,
    seed: int | None,
    scale: str | None,
    output_dir: Path | None,
    workers: int | None,
    archive: Path | None,
) -> None:
    """Build the POD-Galerkin basis archive on the FOM grid.

    Spins the full-order model up from rest, records model.snapshot_count
    snapshots model.snapshot_spacing apart and keeps model.basis_rank modes.
    """
    parent_ctx = ctx.obj
    json_output = parent_ctx.json_output if parent_ctx else False

    try:
        config = load_config(config_path, seed, scale, output_dir, workers)
        target = archive or config.run.basis or config.run.output / "basis.npz"
        result = _build(config, parent_ctx.show_progress if parent_ctx else False)
        result.save(target)
    except MfdaError as err:
        fail(ctx, err)

    summary = _summary(result, target)
    if json_output:
        parent_ctx.output_json(summary)
        return
    _print_summary(summary)
    if parent_ctx:
        parent_ctx.output_success(f"Basis archive written to {target}")


def _build(config: ExperimentConfig, show_progress: bool) -> BasisArchive:
    model_config = config.model
    params = QgeParams(Re=model_config.reynolds, Ro=model_config.rossby)
    model = QgeModel(
        model_config.fom,
        params,
        StepController(atol=model_config.atol, rtol=model_config.rtol),
    )
    with progress_bar(console, show_progress) as progress:
        task = progress.add_task("Collecting snapshots", total=model_config.snapshot_count)
        snapshots = collect_snapshots(
            model,
            model_config.snapshot_count,
            model_config.snapshot_spacing,
            spinup=model_config.snapshot_spinup,
            on_snapshot=lambda _k: progress.advance(task),
        )
    rom = build_rom(snapshots, model_config.basis_rank, params, model.solver)
    return BasisArchive(rom, snapshots, params)


def _summary(result: BasisArchive, target: Path) -> dict[str, Any]:
    rom = result.rom
    ranks = [r for r in REPORTED_RANKS if r <= rom.r]
    if rom.r not in ranks:
        ranks.append(rom.r)
    return {
        "archive": str(target),
        "grid": str(rom.grid),
        "snapshots": result.snapshots.count,
        "rank": rom.r,
        "relative_kinetic_energy": {
            str(r): relative_kinetic_energy(rom, r) for r in ranks
        },
    }


def _print_summary(summary: dict[str, Any]) -> None:
    console.print()
    console.print(
        f"[bold]Basis[/bold] {summary['rank']} modes from {summary['snapshots']} snapshots "
        f"on {summary['grid']}"
    )
    table = Table(title="Relative kinetic energy", show_header=True, header_style="bold")
    table.add_column("r", justify="right")
    table.add_column("Captured", justify="right")
    for r, energy in summary["relative_kinetic_energy"].items():
        table.add_row(r, f"{energy:.6f}")
    console.print(table)
    console.print()
