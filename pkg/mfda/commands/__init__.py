#!/usr/bin/env python3
"""mfda CLI commands and the options they share."""

from collections.abc import Callable, Iterator
from contextlib import contextmanager
from pathlib import Path
from typing import Any, NoReturn, TypeVar

import click
from rich.console import Console
from rich.progress import BarColumn, MofNCompleteColumn, Progress, TextColumn, TimeElapsedColumn

from mfda.config import SCALES, ExperimentConfig
from mfda.errors import MfdaError, exit_code

F = TypeVar("F", bound=Callable[..., Any])


def experiment_options(f: F) -> F:
    """Add --config, --seed, --scale, --output-dir and --workers to a command."""
    decorators = [
        click.option(
            "--config",
            "config_path",
            type=click.Path(dir_okay=False, path_type=Path),
            default=None,
            help="Experiment YAML file (defaults apply when omitted).",
        ),
        click.option("--seed", type=int, default=None, help="Override the master seed."),
        click.option(
            "--scale",
            type=click.Choice(SCALES),
            default=None,
            help="Override the model scale.",
        ),
        click.option(
            "--output-dir",
            type=click.Path(file_okay=False, path_type=Path),
            default=None,
            help="Override the results directory.",
        ),
        click.option("--workers", type=int, default=None, help="Parallel workers."),
    ]
    for decorator in reversed(decorators):
        f = decorator(f)
    return f


def load_config(
    config_path: Path | None,
    seed: int | None,
    scale: str | None,
    output_dir: Path | None,
    workers: int | None,
    **overrides: Any,
) -> ExperimentConfig:
    """Load a config file and apply command-line overrides.

    Raises:
        ConfigError: If the file or an override is invalid.
    """
    config = ExperimentConfig.load(config_path)
    return config.with_overrides(
        scale=scale, seed=seed, output=output_dir, workers=workers, **overrides
    )


def fail(ctx: click.Context, err: MfdaError) -> NoReturn:
    """Report an mfda error with its notes and exit with its family's code."""
    parent_ctx = ctx.obj
    notes = getattr(err, "__notes__", [])
    message = f"{err} ({'; '.join(notes)})" if notes else str(err)
    if parent_ctx:
        parent_ctx.output_error(message)
    else:
        Console(stderr=True).print(f"[red]Error:[/red] {message}")
    ctx.exit(exit_code(err))


@contextmanager
def progress_bar(console: Console, enabled: bool) -> Iterator[Progress]:
    """Progress display for long loops; disabled under --quiet and --json."""
    with Progress(
        TextColumn("[progress.description]{task.description}"),
        BarColumn(),
        MofNCompleteColumn(),
        TimeElapsedColumn(),
        console=console,
        disable=not enabled,
        transient=True,
    ) as progress:
        yield progress
