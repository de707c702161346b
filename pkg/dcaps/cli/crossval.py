"""``dcaps crossval``: stratified k-fold cross validation with a pooled report."""

from __future__ import annotations

import logging
from pathlib import Path

import click
from rich.table import Table

from dcaps.cli._shared import config_options, console, prepare_output, require_manifest, resolve_run_config
from dcaps.evaluation.metrics import format_ratio
from dcaps.evaluation.report import COLUMNS, Report
from dcaps.training.crossval import run_cross_validation


def render_report(report: Report) -> None:
    """Print the stratified report as a Rich table."""
    table = Table(title=report.title or "D-Caps stratified report", title_style="bold cyan")
    table.add_column("metric", style="bold")
    for column in COLUMNS:
        table.add_column(column, justify="right")
    for name in ("acc", "sen", "spe"):
        table.add_row(name, *(format_ratio(getattr(report[c].metrics, name)) for c in COLUMNS))
    table.add_row("n", *(str(report[c].units) if report[c].computed else "n/a" for c in COLUMNS),
                  style="dim")
    console.print(table)


@click.command()
@click.option("--manifest", type=click.Path(), help="Dataset manifest (CSV).")
@click.option("--exp", "experiment", type=click.IntRange(1, 3), help="Experiment id (1, 2 or 3).")
@click.option("--folds", "fold_count", type=int, help="Number of folds (default 10).")
@click.option("--epochs", type=int, help="Training epochs per fold.")
@click.option("--seed", type=int, help="Seed for folds, initialization and shuffling.")
@click.option("--routing", type=int, help="Routing iterations for multi-type layers.")
@click.option("--no-recon", "no_recon", is_flag=True, default=None,
              help="Disable the reconstruction sub-network.")
@click.option("--preset", type=click.Choice(["full", "desk", "toy", "tiny"]),
              help="Network architecture preset.")
@click.option("--group-by", "group_by", type=click.Choice(["polyp", "patient"]),
              help="Grouping key kept together within a fold.")
@click.option("--out", "out", required=True, type=click.Path(), help="Output directory.")
@config_options
def crossval(manifest: str | None, experiment: int | None, fold_count: int | None,
             epochs: int | None, seed: int | None, routing: int | None, no_recon: bool | None,
             preset: str | None, group_by: str | None, out: str, config_path: str | None,
             set_overrides: tuple[str, ...], threads: int | None, verbose: bool) -> None:
    """Train one network per fold and write the pooled stratified report."""
    run_config = resolve_run_config(config_path, set_overrides, {
        "data.manifest": manifest,
        "data.experiment": experiment,
        "data.group_by": group_by,
        "training.fold_count": fold_count,
        "training.epochs": epochs,
        "training.seed": seed,
        "training.routing_override": routing,
        "training.no_recon": no_recon,
        "network.preset": preset,
    }, threads=threads)
    out_dir = prepare_output(out, run_config, verbose)
    log = logging.getLogger("dcaps")

    dataset = require_manifest(run_config)
    result = run_cross_validation(
        dataset,
        run_config.data.experiment,
        run_config.effective_network,
        run_config.training,
        out_dir=out_dir,
        threads=run_config.threads,
        group_by=run_config.data.group_by,
    )
    single = [f.fold for f in result.folds if f.single_class]
    if single:
        log.warning(f"Folds with a single held-out class: {', '.join(map(str, single))}")
    initial, final = result.recon_means()
    if initial is not None and final is not None:
        log.info(f"Held-out reconstruction MSE: {initial:.5f} at init, {final:.5f} after training")

    render_report(result.report)
    console.print(f"[green]Report written to[/green] {Path(out_dir) / 'report.txt'}")
