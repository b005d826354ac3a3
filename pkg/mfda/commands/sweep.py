#!/usr/bin/env python3
"""mfda sweep command - a grid of twin experiments over config axes."""

import math
from pathlib import Path
from typing import Any

import click
from rich.console import Console
from rich.table import Table

from mfda import experiment
from mfda.commands import experiment_options, fail, load_config
from mfda.errors import MfdaError

console = Console()


@click.command()
@experiment_options
@click.pass_context
def sweep(
    ctx: click.Context,
    config_path: Path | None,
    seed: int | None,
    scale: str | None,
    output_dir: Path | None,
    workers: int | None,
) -> None:
    """Run the Cartesian product of sweep.axes.

    Each cell gets its own seed and cell-NNN directory; the per-cell mean RMSE
    goes to sweep.csv. Failing cells are recorded and the sweep carries on.
    """
    parent_ctx = ctx.obj
    json_output = parent_ctx.json_output if parent_ctx else False

    try:
        config = load_config(config_path, seed, scale, output_dir, None)
        if parent_ctx and parent_ctx.show_progress:
            console.print(f"[dim]Running {_cell_count(config.sweep.axes)} cells...[/dim]")
        if parent_ctx:
            workers = parent_ctx.system.default_workers(workers or config.run.workers)
        result = experiment.sweep(config, workers)
    except MfdaError as err:
        fail(ctx, err)

    summary = sweep_summary(result)
    if json_output:
        parent_ctx.output_json(summary)
    else:
        print_sweep(result)
        if parent_ctx:
            for cell in result.failed:
                parent_ctx.output_warning(f"cell {cell.index} failed: {cell.error}")
            parent_ctx.output_success(f"Sweep written to {result.aggregate_path}")

    if result.cells and len(result.failed) == len(result.cells):
        ctx.exit(1)


def _cell_count(axes: dict[str, list[Any]]) -> int:
    return math.prod(len(values) for values in axes.values())


def sweep_summary(result: experiment.SweepResult) -> dict[str, Any]:
    """JSON-ready view of a sweep."""
    return {
        "aggregate": str(result.aggregate_path),
        "axes": result.axes,
        "failed": len(result.failed),
        "cells": [
            {
                "cell": c.index,
                "seed": c.seed,
                "overrides": c.overrides,
                "status": c.status,
                "rmse": None if math.isnan(c.rmse) else c.rmse,
                "error": c.error,
            }
            for c in result.cells
        ],
    }


def print_sweep(result: experiment.SweepResult) -> None:
    """Print one row per cell."""
    console.print()
    table = Table(title="Sweep", show_header=True, header_style="bold")
    table.add_column("Cell", justify="right")
    for name in result.axes:
        table.add_column(name)
    table.add_column("RMSE", justify="right")
    table.add_column("Status")
    for c in result.cells:
        status = "[green]ok[/green]" if c.status == "ok" else f"[red]{c.status}[/red]"
        rmse = "-" if math.isnan(c.rmse) else f"{c.rmse:.4f}"
        table.add_row(
            str(c.index),
            *(_fmt_axis(c.overrides[name]) for name in result.axes),
            rmse,
            status,
        )
    console.print(table)
    console.print()


def _fmt_axis(value: Any) -> str:
    if isinstance(value, list | tuple):
        return "/".join(str(v) for v in value)
    return str(value)
