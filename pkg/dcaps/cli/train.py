"""``dcaps train``: train one network on every record of an experiment (no CV)."""

from __future__ import annotations

import logging

import click
import numpy as np

from dcaps.cli._shared import config_options, console, prepare_output, require_manifest, resolve_run_config
from dcaps.data.experiments import build_experiment
from dcaps.network.model import build
from dcaps.training.crossval import group_ids, load_split_images
from dcaps.training.folds import split_validation
from dcaps.training.trainer import TrainingData, train_fold


@click.command()
@click.option("--manifest", type=click.Path(), help="Dataset manifest (CSV).")
@click.option("--exp", "experiment", type=click.IntRange(1, 3), help="Experiment id (1, 2 or 3).")
@click.option("--epochs", type=int, help="Training epochs.")
@click.option("--seed", type=int, help="Seed for initialization and shuffling.")
@click.option("--routing", type=int, help="Routing iterations for multi-type layers.")
@click.option("--no-recon", "no_recon", is_flag=True, default=None,
              help="Disable the reconstruction sub-network.")
@click.option("--preset", type=click.Choice(["full", "desk", "toy", "tiny"]),
              help="Network architecture preset.")
@click.option("--out", "out", required=True, type=click.Path(), help="Output directory.")
@config_options
def train(manifest: str | None, experiment: int | None, epochs: int | None, seed: int | None,
          routing: int | None, no_recon: bool | None, preset: str | None, out: str,
          config_path: str | None, set_overrides: tuple[str, ...], threads: int | None,
          verbose: bool) -> None:
    """Train a single network and write its checkpoints and training log."""
    run_config = resolve_run_config(config_path, set_overrides, {
        "data.manifest": manifest,
        "data.experiment": experiment,
        "training.epochs": epochs,
        "training.seed": seed,
        "training.routing_override": routing,
        "training.no_recon": no_recon,
        "network.preset": preset,
    }, threads=threads)
    out_dir = prepare_output(out, run_config, verbose)
    log = logging.getLogger("dcaps")

    dataset = require_manifest(run_config)
    split = build_experiment(dataset.records, run_config.data.experiment)
    net_config = run_config.effective_network
    images = load_split_images(dataset, split, net_config, workers=run_config.threads)
    labels = np.asarray(split.labels)
    ids = [r.image_id for r in split.records]

    training = run_config.training
    train_idx = list(range(len(split)))
    validation = None
    if training.validation_fraction > 0:
        train_idx, held = split_validation(labels, group_ids(split, run_config.data.group_by),
                                           training.validation_fraction, training.seed)
        validation = TrainingData(images[held], labels[held], [ids[i] for i in held])

    net = build(net_config, seed=training.seed)
    log.info(f"Training on {len(train_idx)} images, {net.parameter_count()} parameters")
    result = train_fold(net, TrainingData(images[train_idx], labels[train_idx],
                                          [ids[i] for i in train_idx]),
                        training, out_dir=out_dir, fold=0, validation=validation)

    if result.epochs:
        last = result.epochs[-1]
        console.print(f"[bold]Final epoch {last.epoch}:[/bold] loss {last.train_loss:.4f}, "
                      f"accuracy {last.train_acc:.3f}")
    console.print(f"[green]Checkpoint:[/green] {result.checkpoint}")
    if result.best_checkpoint is not None:
        console.print(f"[green]Best validation checkpoint:[/green] {result.best_checkpoint} "
                      f"(accuracy {result.best_val_accuracy:.3f})")
