"""Stratified k-fold cross validation and the ablation sweeps built on it.

Output directory layout (``out_dir``)::

    folds.json                     partition (test polyps / images per fold)
    fold{f}/train_log.jsonl
    fold{f}/fold{f}_epoch{e}.ckpt
    fold{f}/votes.json             held-out image votes of that fold
    fold{f}/report.json|txt
    votes.json                     pooled held-out votes
    report.json|txt                pooled stratified report
    summary.json                   per-fold and pooled metrics, recon MSE

Folds are independent: each builds its own network from
``seed + fold`` and owns its optimizer, so they may train on several
threads. Results are always collected in fold order.
"""

from __future__ import annotations

import logging
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from dcaps.core.atomic import write_json_atomic, write_text_atomic
from dcaps.core.errors import ConfigError
from dcaps.data.experiments import ExperimentSplit, build_experiment
from dcaps.data.manifest import Manifest
from dcaps.data.preprocess import load_images
from dcaps.evaluation.metrics import format_ratio
from dcaps.evaluation.report import Report, TableRow, emit_report, render_table, stratified_report
from dcaps.evaluation.votes import ImageVote, sort_votes
from dcaps.network.config import DCapsConfig
from dcaps.network.model import build
from dcaps.training.folds import Fold, split_validation, stratified_kfold
from dcaps.training.trainer import (
    FoldTraining,
    TrainConfig,
    TrainingData,
    image_votes,
    reconstruction_mse,
    train_fold,
)

logger = logging.getLogger(__name__)

GROUP_KEYS = ("polyp", "patient")


@dataclass
class FoldResult:
    fold: int
    train_indices: tuple[int, ...]
    test_indices: tuple[int, ...]
    training: FoldTraining
    votes: list[ImageVote]
    report: Report
    recon_mse_initial: float | None = None
    recon_mse_final: float | None = None

    @property
    def single_class(self) -> bool:
        counts = self.report["All Polyps"].counts
        return (counts.tp + counts.fn) == 0 or (counts.tn + counts.fp) == 0

    def summary(self) -> dict[str, Any]:
        return {
            "fold": self.fold,
            "test_images": len(self.test_indices),
            "single_class": self.single_class,
            "all_polyps": self.report["All Polyps"].to_dict(),
            "all_images": self.report["All Images"].to_dict(),
            "recon_mse_initial": self.recon_mse_initial,
            "recon_mse_final": self.recon_mse_final,
            "final_train_loss": self.training.epochs[-1].train_loss if self.training.epochs else None,
        }


@dataclass
class CrossValResult:
    experiment_id: int
    folds: list[FoldResult]
    votes: list[ImageVote]
    report: Report
    labels: dict[str, int] = field(default_factory=dict)

    def recon_means(self) -> tuple[float | None, float | None]:
        initial = [f.recon_mse_initial for f in self.folds if f.recon_mse_initial is not None]
        final = [f.recon_mse_final for f in self.folds if f.recon_mse_final is not None]
        return (float(np.mean(initial)) if initial else None,
                float(np.mean(final)) if final else None)

    def summary(self) -> dict[str, Any]:
        initial, final = self.recon_means()
        return {
            "experiment_id": self.experiment_id,
            "fold_count": len(self.folds),
            "folds": [f.summary() for f in self.folds],
            "pooled": self.report.to_dict()["strata"],
            "recon_mse": {"initial_mean": initial, "final_mean": final},
        }


def group_ids(split: ExperimentSplit, group_by: str) -> list[str]:
    if group_by not in GROUP_KEYS:
        raise ConfigError(f"group_by must be one of {', '.join(GROUP_KEYS)}; got {group_by!r}")
    if group_by == "patient":
        return [r.patient_id for r in split.records]
    return [r.polyp_id for r in split.records]


def load_split_images(manifest: Manifest, split: ExperimentSplit, config: DCapsConfig,
                      workers: int = 1) -> np.ndarray:
    h, w, _ = config.input_shape
    return load_images([manifest.image_file(r) for r in split.records], (h, w), workers=workers)


def write_votes(path: Path, votes: Sequence[ImageVote], labels: dict[str, int]) -> None:
    polyps = {v.polyp_id for v in votes}
    write_json_atomic(path, {
        "votes": [v.to_dict() for v in sort_votes(votes)],
        "labels": {p: labels[p] for p in sorted(polyps)},
    })


def _run_fold(fold: Fold, split: ExperimentSplit, images: np.ndarray, groups: Sequence[str],
              net_config: DCapsConfig, train_config: TrainConfig, out_dir: Path | None) -> FoldResult:
    labels = np.asarray(split.labels)
    ids = [r.image_id for r in split.records]
    fold_dir = out_dir / f"fold{fold.index}" if out_dir is not None else None
    train_idx = list(fold.train)
    test_idx = list(fold.test)

    validation = None
    if train_config.validation_fraction > 0:
        keep, held = split_validation(labels[train_idx], [groups[i] for i in train_idx],
                                      train_config.validation_fraction, train_config.seed + fold.index)
        validation_idx = [train_idx[i] for i in held]
        train_idx = [train_idx[i] for i in keep]
        validation = TrainingData(images[validation_idx], labels[validation_idx],
                                  [ids[i] for i in validation_idx])

    net = build(net_config, seed=train_config.seed + fold.index)
    test_images = images[test_idx]
    recon_initial = reconstruction_mse(net, test_images) if net_config.recon_enabled else None

    training = train_fold(
        net,
        TrainingData(images[train_idx], labels[train_idx], [ids[i] for i in train_idx]),
        train_config,
        out_dir=fold_dir,
        fold=fold.index,
        validation=validation,
    )

    recon_final = reconstruction_mse(net, test_images) if net_config.recon_enabled else None
    test_records = [split.records[i] for i in test_idx]
    votes = image_votes(net, test_images, test_records)
    polyp_labels = {split.records[i].polyp_id: int(labels[i]) for i in test_idx}
    report = stratified_report(votes, polyp_labels, title=f"fold {fold.index} held-out")
    result = FoldResult(fold.index, tuple(train_idx), fold.test, training, votes, report,
                        recon_initial, recon_final)
    if result.single_class:
        logger.warning("fold %d: held-out polyps are all one class; sensitivity or specificity "
                       "is undefined for this fold", fold.index)
    if fold_dir is not None:
        write_votes(fold_dir / "votes.json", votes, polyp_labels)
        emit_report(report, fold_dir)
    return result


def run_cross_validation(manifest: Manifest, experiment_id: int, net_config: DCapsConfig,
                         train_config: TrainConfig, out_dir: Path | None = None, threads: int = 1,
                         group_by: str = "polyp", images: np.ndarray | None = None) -> CrossValResult:
    """Train and evaluate one network per fold; pool the held-out votes.

    ``net_config`` is used as given (apply ``TrainConfig.apply_to`` first
    for routing / reconstruction overrides). ``images`` may carry the
    already-decoded experiment images in split order.

    :raises DataError: empty or single-class experiment, unreadable images.
    :raises ConfigError: too many folds for the number of groups.
    """
    train_config.validate()
    net_config.validate()
    split = build_experiment(manifest.records, experiment_id)
    groups = group_ids(split, group_by)
    folds = stratified_kfold(split.labels, train_config.fold_count, groups, train_config.seed)
    if images is None:
        images = load_split_images(manifest, split, net_config, workers=threads)

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_json_atomic(out_dir / "folds.json", {
            "experiment_id": split.experiment_id,
            "group_by": group_by,
            "folds": [
                {
                    "fold": f.index,
                    "test_groups": sorted({groups[i] for i in f.test}),
                    "test_images": [split.records[i].image_id for i in f.test],
                }
                for f in folds
            ],
        })
    logger.info("experiment %d: %d images, %d groups, %d folds, %d thread(s)",
                split.experiment_id, len(split), len(set(groups)), len(folds), threads)

    def run(fold: Fold) -> FoldResult:
        return _run_fold(fold, split, images, groups, net_config, train_config, out_dir)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, folds))
    else:
        results = [run(f) for f in folds]

    votes = sort_votes(v for r in results for v in r.votes)
    labels = split.polyp_labels()
    report = stratified_report(votes, labels, title=f"experiment {split.experiment_id} pooled held-out")
    result = CrossValResult(split.experiment_id, results, votes, report, labels)
    if out_dir is not None:
        write_votes(out_dir / "votes.json", votes, labels)
        emit_report(report, out_dir)
        write_json_atomic(out_dir / "summary.json", result.summary())
    return result


# ---------------------------------------------------------------------------
# Ablations
# ---------------------------------------------------------------------------


@dataclass
class AblationRow:
    variant: str
    result: CrossValResult

    def to_dict(self) -> dict[str, Any]:
        polyps = self.result.report["All Polyps"].metrics
        images = self.result.report["All Images"].metrics
        initial, final = self.result.recon_means()
        return {
            "variant": self.variant,
            "all_polyps": polyps._asdict(),
            "all_images_acc": images.acc,
            "recon_mse_initial": initial,
            "recon_mse_final": final,
        }


def routing_variants(net_config: DCapsConfig, iterations: Sequence[int]) -> dict[str, DCapsConfig]:
    return {f"routing{r}": net_config.with_routing(r) for r in iterations}


def recon_variants(net_config: DCapsConfig) -> dict[str, DCapsConfig]:
    return {"recon": net_config.with_recon(True), "no-recon": net_config.with_recon(False)}


def run_ablation(manifest: Manifest, experiment_id: int, variants: dict[str, DCapsConfig],
                 train_config: TrainConfig, out_dir: Path | None = None, threads: int = 1,
                 group_by: str = "polyp") -> list[AblationRow]:
    """One full cross validation per variant, sharing decoded images and folds."""
    if not variants:
        raise ConfigError("ablation needs at least one variant")
    split = build_experiment(manifest.records, experiment_id)
    first = next(iter(variants.values()))
    images = load_split_images(manifest, split, first, workers=threads)
    rows = []
    for name, cfg in variants.items():
        logger.info("ablation variant %s", name)
        sub_dir = Path(out_dir) / name if out_dir is not None else None
        result = run_cross_validation(manifest, experiment_id, cfg, train_config, sub_dir,
                                      threads=threads, group_by=group_by, images=images)
        rows.append(AblationRow(name, result))
    return rows


def _relative_change(rows: Sequence[AblationRow], base: str, other: str) -> float | None:
    by_name = {r.variant: r.to_dict()["all_polyps"]["acc"] for r in rows}
    a, b = by_name.get(base), by_name.get(other)
    if a is None or b is None or a == 0:
        return None
    return (b - a) / a


def render_ablation(rows: Sequence[AblationRow], title: str) -> str:
    table_rows = []
    for row in rows:
        d = row.to_dict()
        p = d["all_polyps"]
        recon = d["recon_mse_final"]
        table_rows.append(TableRow(row.variant, [
            format_ratio(p["acc"]), format_ratio(p["sen"]), format_ratio(p["spe"]),
            format_ratio(d["all_images_acc"]),
            "n/a" if recon is None else f"{recon:.5f}",
        ]))
    notes = ["values in %, recon = held-out reconstruction MSE after training"]
    change = _relative_change(rows, "recon", "no-recon")
    if change is not None:
        notes.append(f"no-recon vs recon All Polyps accuracy: {100 * change:+.2f}% relative")
    return render_table(
        title=title,
        corner="variant",
        headers=["polyp acc", "polyp sen", "polyp spe", "image acc", "recon MSE"],
        rows=table_rows,
        notes=notes,
    )


def emit_ablation(rows: Sequence[AblationRow], out_dir: Path, title: str) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    json_path = out_dir / "ablation.json"
    text_path = out_dir / "ablation.txt"
    write_json_atomic(json_path, {
        "title": title,
        "variants": [r.to_dict() for r in rows],
        "no_recon_relative_change": _relative_change(rows, "recon", "no-recon"),
    })
    write_text_atomic(text_path, render_ablation(rows, title))
    return json_path, text_path
