#!/usr/bin/env python3
"""
Online Kernel Lab CLI

Runs online kernel SGD experiments, checks the theoretical envelopes and
writes errors.csv / fit.csv / errors.svg.

Exit codes: 0 all checks pass, 1 a check failed, 2 usage or config error.
"""

import logging
import math
import sys
from pathlib import Path
from typing import Optional

# Add parent directory to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent))

import click
from rich.console import Console
from rich.logging import RichHandler
from rich.markup import escape
from rich.panel import Panel
from rich.progress import Progress, SpinnerColumn, TextColumn
from rich.table import Table

from config.experiment import ExperimentConfig
from config.settings import settings
from src.errors import ConfigError, OKLError
from src.harness import CheckResult, ExperimentResult, run_experiment, run_sweep
from src.reporting import write_outputs, write_sweep
from src.verification import oracle_checks, verify_bound_grid

console = Console()
logger = logging.getLogger("okl")

EXIT_PASS = 0
EXIT_FAIL = 1
EXIT_USAGE = 2


def setup_logging(verbose: bool) -> None:
    level = logging.DEBUG if verbose else getattr(logging, settings.log_level.upper(), logging.INFO)
    logging.basicConfig(
        level=level,
        format="%(message)s",
        handlers=[RichHandler(console=console, rich_tracebacks=True, show_path=False)],
        force=True,
    )


def load_config(path: Optional[str]) -> ExperimentConfig:
    """Read the experiment file (or defaults) and the environment; exit 2 on any problem."""
    errors = settings.validate()
    if errors:
        console.print("[red]Configuration errors:[/red]")
        for err in errors:
            console.print(f"  - {err}")
        sys.exit(EXIT_USAGE)
    try:
        return ExperimentConfig.from_file(path) if path else ExperimentConfig()
    except ConfigError as e:
        console.print(f"[red]Config error:[/red] {e}")
        sys.exit(EXIT_USAGE)


def print_checks(checks: list[CheckResult], title: str) -> None:
    table = Table(title=title)
    table.add_column("Check", style="cyan")
    table.add_column("Result")
    table.add_column("Detail", style="dim")
    for check in checks:
        mark = "[green]✓ pass[/green]" if check.passed else "[red]✗ FAIL[/red]"
        table.add_row(escape(check.name), mark, escape(check.detail))
    console.print(table)


def print_result(result: ExperimentResult) -> None:
    """Pretty print an experiment's fits, constants and checks."""
    problem = result.problem
    config = problem.config
    theta = "-" if problem.theta is None else f"{problem.theta:.6g}"
    console.print(Panel(
        f"{config.model.decay} n={config.model.n} kappa^2={problem.kappa_sq:.4g} "
        f"r={problem.target.regularity_r:g} beta={problem.beta:.4g} theta={theta}\n"
        f"algorithm={config.algorithm} schedule={config.schedule.variant} "
        f"T={config.run.T} seeds={config.seeds}",
        title="Experiment",
    ))

    if result.fits:
        table = Table(title="Rate Fits")
        table.add_column("Norm", style="cyan")
        table.add_column("Slope", justify="right")
        table.add_column("Theory", justify="right")
        table.add_column("R²", justify="right", style="dim")
        for fit in result.fits:
            theory = "-" if math.isnan(fit.theory_exponent) else f"{-fit.theory_exponent:.4f}"
            table.add_row(fit.norm, f"{fit.slope:.4f}", theory, f"{fit.r_squared:.4f}")
        console.print(table)

    if result.report is not None and result.report.constants:
        table = Table(title="Bound Constants")
        table.add_column("Constant", style="cyan")
        table.add_column("Value", justify="right")
        for name, value in result.report.constants.items():
            table.add_row(escape(name), f"{value:.6g}")
        console.print(table)
        for note in result.report.notes:
            console.print(f"[yellow]Note:[/yellow] {escape(note)}")

    if result.checks:
        print_checks(result.checks, "Checks")


@click.group()
@click.option("--verbose", "-v", is_flag=True, help="Debug logging")
def cli(verbose: bool):
    """Online Kernel Lab CLI"""
    setup_logging(verbose)


@cli.command()
@click.option("--config", "-c", "config_path", required=True, type=click.Path(), help="Experiment file")
@click.option("--out", "-o", "out_dir", type=click.Path(), help="Output directory (overrides [output] dir)")
def run(config_path: str, out_dir: Optional[str]):
    """Run an experiment and write errors.csv, fit.csv and errors.svg."""
    config = load_config(config_path)
    if out_dir:
        config = config.replace(output_dir=Path(out_dir))

    try:
        with Progress(SpinnerColumn(), TextColumn("[progress.description]{task.description}"),
                      console=console) as progress:
            progress.add_task(f"Running {config.seeds} trials...", total=None)
            result = run_experiment(config)
        paths = write_outputs(result.report, result.records, config.output_dir, result.fits)
    except ConfigError as e:
        console.print(f"[red]Config error:[/red] {e}")
        sys.exit(EXIT_USAGE)
    except OKLError as e:
        console.print(f"[red]Run failed:[/red] {e}")
        sys.exit(EXIT_FAIL)
    except OSError as e:
        console.print(f"[red]Output error:[/red] {e}")
        sys.exit(EXIT_USAGE)

    print_result(result)
    console.print(f"\n[dim]Wrote {paths.errors_csv.parent}[/dim]")
    sys.exit(EXIT_PASS if result.passed else EXIT_FAIL)


@cli.command("verify-bounds")
@click.option("--config", "-c", "config_path", required=True, type=click.Path(), help="Experiment file")
def verify_bounds(config_path: str):
    """Check every step-sum, bias, trace and variance envelope on the [verify] grid."""
    config = load_config(config_path)
    try:
        with Progress(SpinnerColumn(), TextColumn("[progress.description]{task.description}"),
                      console=console) as progress:
            progress.add_task("Checking envelopes...", total=None)
            checks = verify_bound_grid(config)
    except ConfigError as e:
        console.print(f"[red]Config error:[/red] {e}")
        sys.exit(EXIT_USAGE)
    except OKLError as e:
        console.print(f"[red]Verification failed:[/red] {e}")
        sys.exit(EXIT_FAIL)

    print_checks(checks, "Bound Grid")
    sys.exit(EXIT_PASS if all(c.passed for c in checks) else EXIT_FAIL)


@cli.command("oracle-check")
@click.option("--config", "-c", "config_path", type=click.Path(), help="Experiment file (defaults if omitted)")
def oracle_check(config_path: Optional[str]):
    """Primal/dual equivalence, operator inequalities and Monte Carlo consistency."""
    config = load_config(config_path)
    try:
        with Progress(SpinnerColumn(), TextColumn("[progress.description]{task.description}"),
                      console=console) as progress:
            progress.add_task("Running oracle checks...", total=None)
            checks = oracle_checks(config)
    except ConfigError as e:
        console.print(f"[red]Config error:[/red] {e}")
        sys.exit(EXIT_USAGE)
    except OKLError as e:
        console.print(f"[red]Oracle check failed:[/red] {e}")
        sys.exit(EXIT_FAIL)

    print_checks(checks, "Oracle Checks")
    sys.exit(EXIT_PASS if all(c.passed for c in checks) else EXIT_FAIL)


@cli.command()
@click.option("--config", "-c", "config_path", required=True, type=click.Path(), help="Experiment file")
def sweep(config_path: str):
    """Run the [sweep] grid over r, beta and theta; writes one directory per point plus sweep.csv."""
    config = load_config(config_path)

    def on_point(point_config: ExperimentConfig, outcome) -> None:
        if isinstance(outcome, ExperimentResult):
            write_outputs(outcome.report, outcome.records, point_config.output_dir, outcome.fits)
            status = "[green]pass[/green]" if outcome.passed else "[red]FAIL[/red]"
        else:
            status = f"[red]error[/red] {outcome}"
        console.print(f"  {point_config.output_dir.name}: {status}")

    try:
        summary = run_sweep(config, on_point=on_point)
        path = write_sweep(summary, config.output_dir)
    except ConfigError as e:
        console.print(f"[red]Config error:[/red] {e}")
        sys.exit(EXIT_USAGE)
    except OSError as e:
        console.print(f"[red]Output error:[/red] {e}")
        sys.exit(EXIT_USAGE)

    table = Table(title="Sweep")
    for column in summary.columns:
        table.add_column(column, style="cyan" if column in ("r", "beta", "theta") else None)
    for row in summary.itertuples(index=False):
        table.add_row(*[f"{v:.4g}" if isinstance(v, float) else str(v) for v in row])
    console.print(table)
    console.print(f"\n[dim]Wrote {path}[/dim]")
    sys.exit(EXIT_PASS if bool(summary["all_pass"].all()) else EXIT_FAIL)


if __name__ == "__main__":
    cli()
