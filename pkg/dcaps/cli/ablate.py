"""``dcaps ablate``: routing-iteration and reconstruction sweeps over cross validation.

    dcaps ablate routing --iterations 2,3,4,5 ...   one crossval per iteration count
    dcaps ablate recon ...                          λ > 0 against --no-recon
"""

from __future__ import annotations

import dataclasses
from collections.abc import Callable
from typing import Any

import click
from rich.table import Table

from dcaps.cli._shared import (
    config_options,
    console,
    parse_int_list,
    prepare_output,
    require_manifest,
    resolve_run_config,
)
from dcaps.evaluation.metrics import format_ratio
from dcaps.training.crossval import AblationRow, emit_ablation, recon_variants, routing_variants, run_ablation


def _common_options(func: Callable[..., Any]) -> Callable[..., Any]:
    func = config_options(func)
    func = click.option("--out", "out", required=True, type=click.Path(),
                        help="Output directory (one sub-directory per variant).")(func)
    func = click.option("--preset", type=click.Choice(["full", "desk", "toy", "tiny"]),
                        help="Network architecture preset.")(func)
    func = click.option("--seed", type=int, help="Seed for folds, initialization and shuffling.")(func)
    func = click.option("--epochs", type=int, help="Training epochs per fold.")(func)
    func = click.option("--folds", "fold_count", type=int, help="Number of folds.")(func)
    func = click.option("--exp", "experiment", type=click.IntRange(1, 3),
                        help="Experiment id (1, 2 or 3).")(func)
    func = click.option("--manifest", type=click.Path(), help="Dataset manifest (CSV).")(func)
    return func


def _render(rows: list[AblationRow], title: str) -> None:
    table = Table(title=title, title_style="bold cyan")
    table.add_column("variant", style="bold")
    for header in ("polyp acc", "polyp sen", "polyp spe", "image acc", "recon MSE"):
        table.add_column(header, justify="right")
    for row in rows:
        d = row.to_dict()
        p = d["all_polyps"]
        recon = d["recon_mse_final"]
        table.add_row(row.variant, format_ratio(p["acc"]), format_ratio(p["sen"]),
                      format_ratio(p["spe"]), format_ratio(d["all_images_acc"]),
                      "n/a" if recon is None else f"{recon:.5f}")
    console.print(table)


def _run(kind: str, make_variants: Callable[[Any], dict], manifest: str | None,
         experiment: int | None, fold_count: int | None, epochs: int | None, seed: int | None,
         preset: str | None, out: str, config_path: str | None, set_overrides: tuple[str, ...],
         threads: int | None, verbose: bool) -> None:
    run_config = resolve_run_config(config_path, set_overrides, {
        "data.manifest": manifest,
        "data.experiment": experiment,
        "training.fold_count": fold_count,
        "training.epochs": epochs,
        "training.seed": seed,
        "network.preset": preset,
    }, threads=threads)
    out_dir = prepare_output(out, run_config, verbose)
    dataset = require_manifest(run_config)

    # Variants carry their own routing / reconstruction settings.
    training = dataclasses.replace(run_config.training, routing_override=None, no_recon=False)
    variants = make_variants(run_config.effective_network)
    rows = run_ablation(dataset, run_config.data.experiment, variants, training, out_dir=out_dir,
                        threads=run_config.threads, group_by=run_config.data.group_by)
    title = f"{kind} ablation, experiment {run_config.data.experiment}"
    emit_ablation(rows, out_dir, title)
    _render(rows, title)
    console.print(f"[green]Comparison written to[/green] {out_dir / 'ablation.txt'}")


@click.group()
def ablate() -> None:
    """Rerun cross validation per variant and compare."""
    pass


@ablate.command(name="routing")
@click.option("--iterations", default="2,3,4,5", show_default=True,
              help="Comma-separated routing iteration counts.")
@_common_options
def ablate_routing(iterations: str, **kwargs: Any) -> None:
    """One cross validation per routing iteration count."""
    counts = parse_int_list(iterations)
    _run("routing", lambda cfg: routing_variants(cfg, counts), **kwargs)


@ablate.command(name="recon")
@_common_options
def ablate_recon(**kwargs: Any) -> None:
    """Cross validation with and without the reconstruction sub-network."""
    _run("reconstruction", recon_variants, **kwargs)
