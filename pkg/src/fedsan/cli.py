"""Command line interface for FEDSAN."""
from __future__ import annotations

import dataclasses
import logging
from pathlib import Path
from typing import Optional

import typer
from rich.console import Console
from rich.table import Table

from .config import ConfigError, config_to_json, default_config, parse_config
from .pipeline import ExperimentResult, load_overrides, run_experiment, sweep as run_sweep
from .storage import create_storage, recent_runs, round_metrics

app = typer.Typer(add_completion=False, help="Federated data sanitization experiments.")
console = Console()
err_console = Console(stderr=True)

LOG_FORMAT = "%(asctime)s [%(levelname)s] %(name)s: %(message)s"


def _rate(value: Optional[float]) -> str:
    if value is None or value != value:
        return "-"
    return f"{value:.4f}"


def _fail(exc: Exception) -> typer.Exit:
    if isinstance(exc, ConfigError):
        err_console.print("[bold red]Invalid configuration:[/bold red]")
        for problem in exc.violations:
            err_console.print(f"[red]  - {problem}[/red]")
        return typer.Exit(code=2)
    err_console.print(f"[bold red]Run failed:[/bold red] {exc}")
    return typer.Exit(code=1)


def _print_result(result: ExperimentResult) -> None:
    report = result.report
    table = Table("Metric", "Value", title=str(result.output_dir))
    table.add_row("accuracy", _rate(report.accuracy))
    table.add_row("attack success rate", _rate(report.attack_success_rate))
    for name, value in sorted(report.asr_components.items()):
        table.add_row(f"  asr {name}", _rate(value))
    table.add_row("sanitization precision", _rate(report.sanitization_precision))
    table.add_row("sanitization recall", _rate(report.sanitization_recall))
    table.add_row("removed samples", str(report.removed_count))
    console.print(table)


@app.callback(invoke_without_command=True)
def main_callback(
    ctx: typer.Context,
    print_default_config: bool = typer.Option(
        False, "--print-default-config", help="Print the default configuration as JSON and exit"
    ),
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Log at DEBUG level"),
):
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO, format=LOG_FORMAT)
    if print_default_config:
        typer.echo(config_to_json(default_config()))
        raise typer.Exit()
    if ctx.invoked_subcommand is None:
        typer.echo(ctx.get_help())
        raise typer.Exit()


@app.command()
def run(
    config: Path = typer.Option(..., "--config", help="Path to a JSON or YAML experiment config"),
    seed: Optional[int] = typer.Option(None, "--seed", help="Override master_seed"),
    output: Optional[Path] = typer.Option(None, "--output", help="Output directory"),
    ledger: Optional[Path] = typer.Option(None, "--ledger", help="SQLite run ledger to record into"),
):
    """Run one experiment and write history.csv and summary.json."""

    try:
        cfg = parse_config(config)
        if seed is not None:
            cfg = dataclasses.replace(cfg, master_seed=seed)
        session_factory = create_storage(ledger) if ledger is not None else None
        result = run_experiment(cfg, output, ledger=session_factory)
    except (ValueError, RuntimeError, OSError) as exc:
        raise _fail(exc) from exc
    _print_result(result)


@app.command()
def sweep(
    config: Path = typer.Option(..., "--config", help="Base experiment config"),
    overrides: Path = typer.Option(..., "--overrides", help="Overrides list or matrix (JSON or YAML)"),
    output: Optional[Path] = typer.Option(None, "--output", help="Sweep root directory"),
    parallel: bool = typer.Option(False, "--parallel", help="Run configurations on a thread pool"),
    fixed_seed: bool = typer.Option(False, "--fixed-seed", help="Use master_seed for every run"),
    ledger: Optional[Path] = typer.Option(None, "--ledger", help="SQLite run ledger to record into"),
):
    """Run the base config once per override and write an aggregate sweep.csv."""

    try:
        cfg = parse_config(config)
        entries = load_overrides(overrides)
        session_factory = create_storage(ledger) if ledger is not None else None
        runs = run_sweep(cfg, entries, output, parallel=parallel, fixed_seed=fixed_seed, ledger=session_factory)
    except (ValueError, RuntimeError, OSError) as exc:
        raise _fail(exc) from exc

    table = Table("Run", "Overrides", "Accuracy", "ASR", "Precision", "Recall", "Removed")
    for entry in runs:
        report = entry.result.report
        table.add_row(
            str(entry.index),
            ", ".join(f"{k}={v}" for k, v in entry.overrides.items()) or "-",
            _rate(report.accuracy),
            _rate(report.attack_success_rate),
            _rate(report.sanitization_precision),
            _rate(report.sanitization_recall),
            str(report.removed_count),
        )
    console.print(table)


@app.command()
def runs(
    ledger: Path = typer.Option(..., "--ledger", help="SQLite run ledger"),
    limit: int = typer.Option(10, help="Number of rows to show"),
    run_id: Optional[int] = typer.Option(None, "--run-id", help="Show the per-round metrics of one run"),
):
    """Display the most recent runs recorded in a ledger, or one run's rounds."""

    session_factory = create_storage(ledger)
    if run_id is not None:
        rows = round_metrics(session_factory, run_id)
        if not rows:
            err_console.print(f"[bold red]No rounds recorded for run {run_id}[/bold red]")
            raise typer.Exit(code=1)
        table = Table("Round", "Accuracy", "ASR", "Wall ms", title=f"Run {run_id}")
        for row in rows:
            table.add_row(str(row.round), _rate(row.accuracy), _rate(row.asr), f"{row.wall_ms:.1f}")
        console.print(table)
        return
    table = Table("Id", "Time", "Attack", "Defense", "Aggregator", "Accuracy", "ASR", "Removed", "Output")
    for record in recent_runs(session_factory, limit):
        table.add_row(
            str(record.id),
            record.created_at.isoformat(timespec="seconds"),
            record.attack_kind,
            "on" if record.defense else "off",
            record.aggregator,
            _rate(record.accuracy),
            _rate(record.asr),
            str(record.removed_count),
            record.output_dir,
        )
    console.print(table)


def main():
    app()


if __name__ == "__main__":  # pragma: no cover
    main()
