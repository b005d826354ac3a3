#!/usr/bin/env python3
"""mfda rank-hist command - rank histograms of the forecast ensembles."""

import math
from pathlib import Path
from typing import Any

import click
from rich.console import Console
from rich.table import Table

from mfda.commands import experiment_options, fail, load_config, progress_bar
from mfda.config import FILTER_KINDS
from mfda.errors import MfdaError
from mfda.experiment import ENSEMBLE_NAMES, ExperimentResult, generate_truth, run_twin_experiment
from mfda.io import write_metrics_csv

console = Console()

HISTOGRAM_COLUMNS = ("run", "ensemble", "bin", "count")


@click.command("rank-hist")
@experiment_options
@click.option(
    "--kind",
    type=click.Choice(FILTER_KINDS),
    default=None,
    help="Override filter.kind.",
)
@click.pass_context
def rank_hist(
    ctx: click.Context,
    config_path: Path | None,
    seed: int | None,
    scale: str | None,
    output_dir: Path | None,
    workers: int | None,
    kind: str | None,
) -> None:
    """Run a twin experiment and write its rank histograms.

    Counts are accumulated after run.spinup at the observed points, for the
    principal, control and ancillary forecast ensembles, into rank-hist.csv.
    """
    parent_ctx = ctx.obj
    json_output = parent_ctx.json_output if parent_ctx else False
    show_progress = parent_ctx.show_progress if parent_ctx else False

    try:
        config = load_config(config_path, seed, scale, output_dir, workers, kind=kind)
        with progress_bar(console, show_progress) as progress:
            task = progress.add_task("Generating truth", total=config.run.steps)
            truth = generate_truth(
                config, lambda done, _total: progress.update(task, completed=done)
            )
            task = progress.add_task(
                f"Running {config.filter.kind}", total=config.run.steps * config.run.runs
            )
            result = run_twin_experiment(
                config, truth, progress=lambda _done, _total: progress.advance(task)
            )
        target = config.run.output / "rank-hist.csv"
        write_metrics_csv(target, histogram_rows(result), HISTOGRAM_COLUMNS)
    except MfdaError as err:
        fail(ctx, err)

    if json_output:
        parent_ctx.output_json(
            {
                "filter": result.label,
                "histograms": str(target),
                "kl": _kl_table(result),
            }
        )
        return
    _print_kl(result)
    if parent_ctx:
        parent_ctx.output_success(f"Rank histograms written to {target}")


def histogram_rows(result: ExperimentResult) -> list[dict[str, Any]]:
    """One row per run, ensemble and rank bin."""
    return [
        {"run": run.index, "ensemble": name, "bin": b, "count": int(count)}
        for run in result.runs
        for name in ENSEMBLE_NAMES
        if name in run.histograms
        for b, count in enumerate(run.histograms[name])
    ]


def _kl_table(result: ExperimentResult) -> list[dict[str, Any]]:
    rows = []
    for run in result.runs:
        row: dict[str, Any] = {"run": run.index}
        for name in ENSEMBLE_NAMES:
            kl = run.kl(name)
            row[name] = None if math.isnan(kl) else kl
        rows.append(row)
    return rows


def _print_kl(result: ExperimentResult) -> None:
    console.print()
    table = Table(
        title=f"{result.label} rank histogram KL to uniform",
        show_header=True,
        header_style="bold",
    )
    table.add_column("Run", justify="right")
    for name in ENSEMBLE_NAMES:
        table.add_column(name.capitalize(), justify="right")
    for row in _kl_table(result):
        table.add_row(
            str(row["run"]),
            *("-" if row[name] is None else f"{row[name]:.4f}" for name in ENSEMBLE_NAMES),
        )
    console.print(table)
    console.print()
