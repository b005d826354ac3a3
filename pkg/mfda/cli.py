#!/usr/bin/env python3
"""mfda CLI - multifidelity EnKF twin experiments."""

import json
import logging
from dataclasses import dataclass, field
from typing import Any

import click
from rich.console import Console
from rich.logging import RichHandler
from rich.table import Table

from mfda import __version__
from mfda.system import SystemInfo

console = Console()
error_console = Console(stderr=True)

VERSION_ROWS = (
    ("Python", "python"),
    ("NumPy", "numpy"),
    ("SciPy", "scipy"),
    ("joblib", "joblib"),
    ("Poisson backend", "poisson_backend"),
    ("CPUs", "cpus"),
)


@dataclass
class Context:
    """Global flags and runtime info handed to every command."""

    quiet: bool = False
    json_output: bool = False
    system: SystemInfo = field(default_factory=SystemInfo)

    @property
    def show_progress(self) -> bool:
        return not (self.quiet or self.json_output)

    def output_json(self, data: Any) -> None:
        click.echo(json.dumps(data, indent=2, default=str))

    def output_error(self, message: str) -> None:
        """Errors go to stderr, or to stdout as {"error": ...} under --json."""
        if self.json_output:
            self.output_json({"error": message})
        else:
            error_console.print(f"[red]Error:[/red] {message}")

    def output_success(self, message: str) -> None:
        if self.show_progress:
            console.print(f"[green]{message}[/green]")

    def output_warning(self, message: str) -> None:
        if self.show_progress:
            console.print(f"[yellow]Warning:[/yellow] {message}")


pass_context = click.make_pass_decorator(Context, ensure=True)


def setup_logging(verbose: bool, quiet: bool) -> None:
    """Route the mfda loggers to stderr through rich."""
    level = logging.ERROR if quiet else logging.INFO if verbose else logging.WARNING
    logger = logging.getLogger("mfda")
    for handler in list(logger.handlers):
        if isinstance(handler, RichHandler):
            logger.removeHandler(handler)
    logger.addHandler(RichHandler(console=error_console, show_path=False, markup=False))
    logger.setLevel(level)


def version_callback(ctx: click.Context, _param: click.Parameter, value: bool) -> None:
    """Print mfda, library and backend versions, then exit."""
    if not value or ctx.resilient_parsing:
        return
    versions = {"mfda": __version__} | SystemInfo().as_dict()
    if ctx.params.get("json_output"):
        click.echo(json.dumps(versions, indent=2))
        ctx.exit()

    table = Table(title=f"mfda {__version__}", show_header=False, box=None)
    table.add_column("Component", style="bold")
    table.add_column("Version")
    for label, key in VERSION_ROWS:
        table.add_row(label, str(versions[key]))
    console.print(table)
    ctx.exit()


@click.group()
@click.option(
    "--version",
    is_flag=True,
    callback=version_callback,
    expose_value=False,
    is_eager=True,
    help="Show version information.",
)
@click.option(
    "--json",
    "json_output",
    is_flag=True,
    is_eager=True,
    help="Output in JSON format.",
)
@click.option(
    "-q",
    "--quiet",
    is_flag=True,
    help="Minimal output.",
)
@click.option(
    "-v",
    "--verbose",
    is_flag=True,
    help="Verbose output.",
)
@pass_context
def main(ctx: Context, json_output: bool, quiet: bool, verbose: bool) -> None:
    """mfda - Multifidelity ensemble Kalman filter twin experiments.

    Builds POD-Galerkin bases of the double-gyre quasi-geostrophic model and runs
    EnKF, MLEnKF and MFEnKF twin experiments against a fine-grid truth.
    """
    ctx.json_output = json_output
    ctx.quiet = quiet
    setup_logging(verbose, quiet)


# Import subcommands (must be after main group is defined)
from mfda.commands.build_basis import build_basis  # noqa: E402
from mfda.commands.rank_hist import rank_hist  # noqa: E402
from mfda.commands.run import run  # noqa: E402
from mfda.commands.sweep import sweep  # noqa: E402

# Register commands
main.add_command(build_basis)
main.add_command(rank_hist)
main.add_command(run)
main.add_command(sweep)


if __name__ == "__main__":
    main()
