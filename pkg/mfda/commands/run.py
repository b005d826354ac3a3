#!/usr/bin/env python3
"""mfda run command - one twin experiment averaged over seeded runs."""

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

console = Console()


@click.command()
@experiment_options
@click.option(
    "--kind",
    type=click.Choice(FILTER_KINDS),
    default=None,
    help="Override filter.kind.",
)
@click.option("--n-x", "n_x", type=int, default=None, help="Override the principal ensemble size.")
@click.option("--steps", type=int, default=None, help="Override the number of cycles.")
@click.option("--runs", type=int, default=None, help="Override the number of seeded runs.")
@click.pass_context
def run(
    ctx: click.Context,
    config_path: Path | None,
    seed: int | None,
    scale: str | None,
    output_dir: Path | None,
    workers: int | None,
    kind: str | None,
    n_x: int | None,
    steps: int | None,
    runs: int | None,
) -> None:
    """Run a twin experiment and write per-step CSVs.

    Generates one truth trajectory, runs the configured filter run.runs times with
    seeds derived from the master seed, and writes run-NN.csv files plus summary.csv
    under the output directory.
    """
    parent_ctx = ctx.obj
    json_output = parent_ctx.json_output if parent_ctx else False
    show_progress = parent_ctx.show_progress if parent_ctx else False

    try:
        config = load_config(
            config_path, seed, scale, output_dir, workers, kind=kind, n_x=n_x, steps=steps,
            runs=runs,
        )
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
    except MfdaError as err:
        fail(ctx, err)

    summary = experiment_summary(result)
    if json_output:
        parent_ctx.output_json(summary)
        return
    print_experiment(result)
    if parent_ctx:
        parent_ctx.output_success(f"Results written to {config.run.output}")


def experiment_summary(result: ExperimentResult) -> dict[str, Any]:
    """JSON-ready view of an experiment result."""

    def clean(value: float) -> float | None:
        return None if math.isnan(value) else value

    return {
        "filter": result.label,
        "mean_rmse": result.mean_rmse,
        "summary": str(result.summary_path),
        "runs": [
            {
                "run": r.index,
                "seed": r.seed,
                "rmse": r.rmse,
                "csv": str(r.path),
            }
            | {f"kl_{name}": clean(r.kl(name)) for name in ENSEMBLE_NAMES}
            for r in result.runs
        ],
    }


def _fmt(value: float) -> str:
    return "-" if math.isnan(value) else f"{value:.4f}"


def print_experiment(result: ExperimentResult) -> None:
    """Print per-run RMSE and rank-histogram KL in a table."""
    console.print()
    table = Table(title=f"{result.label} twin experiment", show_header=True, header_style="bold")
    table.add_column("Run", justify="right")
    table.add_column("Seed", justify="right")
    table.add_column("RMSE", justify="right")
    table.add_column("KL principal", justify="right")
    table.add_column("KL control", justify="right")
    table.add_column("KL ancillary", justify="right")
    for r in result.runs:
        table.add_row(
            str(r.index),
            str(r.seed),
            f"{r.rmse:.4f}",
            *(_fmt(r.kl(name)) for name in ENSEMBLE_NAMES),
        )
    table.add_row("[bold]mean[/bold]", "", f"[bold]{result.mean_rmse:.4f}[/bold]", "", "", "")
    console.print(table)
    console.print()
