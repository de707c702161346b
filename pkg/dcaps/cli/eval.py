"""``dcaps eval``: score a manifest with a saved checkpoint and emit the stratified report."""

from __future__ import annotations

import dataclasses
import json
import logging
from pathlib import Path
from typing import Any

import click

from dcaps.cli._shared import config_options, console, require_manifest, resolve_run_config, setup_logging
from dcaps.cli.crossval import render_report
from dcaps.config_manager import RunConfig
from dcaps.core.errors import ConfigError, DataError
from dcaps.core.runtime import resolve_output_dir
from dcaps.data.experiments import ExperimentSplit, build_experiment
from dcaps.data.preprocess import load_images
from dcaps.evaluation.report import emit_report, stratified_report
from dcaps.network.checkpoint import load_checkpoint
from dcaps.training.crossval import write_votes
from dcaps.training.trainer import image_votes


def _restrict_to_fold(split: ExperimentSplit, folds_file: str, fold: int) -> ExperimentSplit:
    """Keep only the held-out images of ``fold`` as listed in a crossval ``folds.json``."""
    try:
        data: dict[str, Any] = json.loads(Path(folds_file).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise DataError(f"cannot read folds file {folds_file}: {e}") from e
    if data.get("experiment_id") != split.experiment_id:
        raise ConfigError(f"{folds_file} belongs to experiment {data.get('experiment_id')}, "
                          f"not {split.experiment_id}")
    entry = next((f for f in data.get("folds", []) if f.get("fold") == fold), None)
    if entry is None:
        raise ConfigError(f"{folds_file} has no fold {fold}")
    position = {r.image_id: i for i, r in enumerate(split.records)}
    missing = [img for img in entry["test_images"] if img not in position]
    if missing:
        raise DataError(f"fold {fold} lists images missing from the manifest: {', '.join(missing[:5])}")
    keep = [position[img] for img in entry["test_images"]]
    return ExperimentSplit(split.experiment_id,
                           tuple(split.records[i] for i in keep),
                           tuple(split.labels[i] for i in keep))


def _explicit_network(set_overrides: tuple[str, ...], preset: str | None) -> bool:
    return preset is not None or any(s.strip().startswith("network.") for s in set_overrides)


@click.command(name="eval")
@click.option("--checkpoint", "checkpoint", required=True, type=click.Path(),
              help="Checkpoint written by train or crossval.")
@click.option("--manifest", type=click.Path(), help="Dataset manifest (CSV).")
@click.option("--exp", "experiment", type=click.IntRange(1, 3), help="Experiment id (1, 2 or 3).")
@click.option("--per-image", "per_image", is_flag=True,
              help="Also compute the All Images column and write per-image votes.")
@click.option("--folds-file", "folds_file", type=click.Path(),
              help="A crossval folds.json; with --fold, evaluate only that fold's held-out images.")
@click.option("--fold", type=int, help="Fold index to evaluate (needs --folds-file).")
@click.option("--preset", type=click.Choice(["full", "desk", "toy", "tiny"]),
              help="Require the checkpoint to match this architecture preset.")
@click.option("--out", "out", required=True, type=click.Path(), help="Output directory.")
@config_options
def eval_cmd(checkpoint: str, manifest: str | None, experiment: int | None, per_image: bool,
             folds_file: str | None, fold: int | None, preset: str | None, out: str,
             config_path: str | None, set_overrides: tuple[str, ...], threads: int | None,
             verbose: bool) -> None:
    """Score every image, vote per polyp and write report.json / report.txt."""
    if (folds_file is None) != (fold is None):
        raise click.UsageError("--folds-file and --fold must be given together")
    run_config = resolve_run_config(config_path, set_overrides, {
        "data.manifest": manifest,
        "data.experiment": experiment,
        "network.preset": preset,
    }, threads=threads)
    out_dir = resolve_output_dir(out)
    setup_logging(out_dir, verbose)
    log = logging.getLogger("dcaps")

    expected = run_config.effective_network if _explicit_network(set_overrides, preset) else None
    net = load_checkpoint(checkpoint, expected_config=expected)
    h, w, _ = net.config.input_shape
    run_config = dataclasses.replace(
        run_config,
        network=net.config,
        training=dataclasses.replace(run_config.training, routing_override=None, no_recon=False),
        data=dataclasses.replace(run_config.data, height=h, width=w),
        preset=f"checkpoint {Path(checkpoint).name}",
    )
    _write_run_config(run_config, out_dir)

    dataset = require_manifest(run_config)
    split = build_experiment(dataset.records, run_config.data.experiment)
    if folds_file is not None:
        split = _restrict_to_fold(split, folds_file, fold)
    if len(split) == 0:
        raise DataError("nothing to evaluate")

    images = load_images([dataset.image_file(r) for r in split.records], (h, w),
                         workers=run_config.threads)
    votes = image_votes(net, images, split.records)
    labels = split.polyp_labels()
    title = f"experiment {split.experiment_id} evaluation of {Path(checkpoint).name}"
    if fold is not None:
        title += f" (fold {fold} held-out)"
    report = stratified_report(votes, labels, include_images=per_image, title=title)
    emit_report(report, out_dir)
    if per_image:
        write_votes(out_dir / "votes.json", votes, labels)
    log.info(f"Evaluated {len(votes)} images of {len(labels)} polyps")

    render_report(report)
    console.print(f"[green]Report written to[/green] {out_dir / 'report.txt'}")


def _write_run_config(run_config: RunConfig, out_dir: Path) -> None:
    path = run_config.write(out_dir)
    logging.getLogger("dcaps").debug(f"Resolved configuration written to {path}")
