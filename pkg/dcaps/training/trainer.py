"""Mini-batch training of one network.

Each epoch shuffles the training set with the fold's seed, walks it in
batches of ``batch_size`` (the last partial batch is kept), and logs one
JSON line ``{fold, epoch, train_loss, train_acc, recon_loss}``. A
checkpoint ``fold{f}_epoch{e}.ckpt`` is written after the final epoch
(``epoch0`` when ``epochs == 0``), and ``fold{f}_best.ckpt`` whenever
validation accuracy improves if a validation split is configured.
"""

from __future__ import annotations

import dataclasses
import json
import logging
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from dcaps.core.atomic import write_json_atomic
from dcaps.core.errors import ConfigError, NumericalError
from dcaps.data.preprocess import augment_batch
from dcaps.evaluation.votes import ImageVote, positive_score
from dcaps.network.checkpoint import save_checkpoint
from dcaps.network.config import DCapsConfig
from dcaps.network.model import DCapsNet
from dcaps.numerics.tensor import backward, zero_grads
from dcaps.training.adam import AdamState, adam_step

logger = logging.getLogger(__name__)

TRAIN_LOG = "train_log.jsonl"


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 4
    epochs: int = 20
    seed: int = 0
    fold_count: int = 10
    lr: float = 1e-3
    no_recon: bool = False
    routing_override: int | None = None
    validation_fraction: float = 0.0
    augment: bool = False

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.fold_count < 2:
            raise ConfigError(f"fold_count must be >= 2, got {self.fold_count}")
        if self.lr < 0:
            raise ConfigError(f"lr must be >= 0, got {self.lr}")
        if self.routing_override is not None and self.routing_override < 1:
            raise ConfigError(f"routing iterations must be >= 1, got {self.routing_override}")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ConfigError(f"validation_fraction must be in [0, 1), got {self.validation_fraction}")

    def apply_to(self, config: DCapsConfig) -> DCapsConfig:
        """Network config with the routing and reconstruction overrides applied."""
        if self.routing_override is not None:
            config = config.with_routing(self.routing_override)
        if self.no_recon:
            config = config.with_recon(False)
        return config

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> TrainConfig:
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown training config key(s): {', '.join(unknown)}")
        return cls(**data)


@dataclass
class TrainingData:
    """Images ``N×H×W×3`` in [0, 1], labels ``N`` and the records' ids for diagnostics."""

    images: np.ndarray
    labels: np.ndarray
    ids: Sequence[str] = ()

    def __post_init__(self) -> None:
        self.labels = np.asarray(self.labels)
        if len(self.images) != len(self.labels):
            raise ConfigError(f"{len(self.images)} images but {len(self.labels)} labels")
        if not self.ids:
            self.ids = [str(i) for i in range(len(self.labels))]

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, indices: Sequence[int]) -> TrainingData:
        idx = np.asarray(indices, dtype=int)
        return TrainingData(self.images[idx], self.labels[idx], [self.ids[i] for i in idx])


@dataclass
class EpochRecord:
    fold: int
    epoch: int
    train_loss: float
    train_acc: float
    recon_loss: float | None

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


@dataclass
class FoldTraining:
    """What ``train_fold`` leaves behind."""

    fold: int
    epochs: list[EpochRecord] = field(default_factory=list)
    checkpoint: Path | None = None
    best_checkpoint: Path | None = None
    best_val_accuracy: float | None = None


def _batch_accuracy(net: DCapsNet, scores: np.ndarray, labels: np.ndarray) -> int:
    if net.config.num_classes == 1:
        predicted = (scores[:, 0] >= 0.5).astype(int)
    else:
        predicted = np.argmax(scores, axis=1)
    return int(np.sum(predicted == labels.astype(int)))


def evaluate_accuracy(net: DCapsNet, data: TrainingData, batch_size: int) -> float:
    correct = 0
    for start in range(0, len(data), batch_size):
        out = net.forward(data.images[start:start + batch_size], reconstruct=False)
        correct += _batch_accuracy(net, out.class_scores.data, data.labels[start:start + batch_size])
    return correct / max(len(data), 1)


def reconstruction_mse(net: DCapsNet, images: np.ndarray, batch_size: int = 8) -> float | None:
    """Per-pixel MSE of the decoder on ``images``; None when there is nothing to measure."""
    if len(images) == 0:
        return None
    total = 0.0
    for start in range(0, len(images), batch_size):
        batch = images[start:start + batch_size]
        out = net.forward(batch, reconstruct=True)
        diff = out.reconstruction.data.astype(np.float64) - batch
        total += float(np.sum(diff * diff))
    return total / images.size


def score_images(net: DCapsNet, images: np.ndarray, batch_size: int = 8) -> np.ndarray:
    """Class scores ``N×C`` as float64."""
    rows = []
    for start in range(0, len(images), batch_size):
        out = net.forward(images[start:start + batch_size], reconstruct=False)
        rows.append(out.class_scores.data.astype(np.float64))
    if not rows:
        return np.zeros((0, net.config.num_classes))
    return np.concatenate(rows)


def image_votes(net: DCapsNet, images: np.ndarray, records: Sequence[Any],
                batch_size: int = 8) -> list[ImageVote]:
    """One vote per image; ``records`` supply polyp id, image id and strata tags."""
    votes = []
    for rec, row in zip(records, score_images(net, images, batch_size), strict=True):
        score, confidence = positive_score(row)
        votes.append(ImageVote(
            polyp_id=rec.polyp_id, image_id=rec.image_id, score=score,
            confidence=confidence, light=rec.light, focus=rec.focus,
        ))
    return votes


def _append_log(path: Path | None, record: EpochRecord) -> None:
    if path is None:
        return
    with open(path, "a", encoding="utf-8") as f:
        f.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")


def train_fold(net: DCapsNet, data: TrainingData, config: TrainConfig, out_dir: Path | None = None,
               fold: int = 0, validation: TrainingData | None = None) -> FoldTraining:
    """Train ``net`` in place.

    :raises ConfigError: empty training set or invalid ``config``.
    :raises NumericalError: non-finite loss or gradient; the offending
        batch's record ids are written to ``fold{f}_nonfinite_batch.json``
        and included in the message.
    """
    config.validate()
    if len(data) == 0:
        raise ConfigError(f"fold {fold}: empty training set")
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / TRAIN_LOG if out_dir is not None else None
    if log_path is not None and log_path.exists():
        log_path.unlink()

    result = FoldTraining(fold=fold)
    params = net.parameters()
    state = AdamState(lr=config.lr)
    rng = np.random.default_rng([config.seed, fold])

    if config.epochs == 0 and out_dir is not None:
        result.checkpoint = save_checkpoint(net, out_dir / f"fold{fold}_epoch0.ckpt",
                                            extra={"fold": fold, "epoch": 0})

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(data))
        loss_sum = recon_sum = 0.0
        correct = 0
        recon_seen = False
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            images = data.images[idx]
            if config.augment:
                images = augment_batch(images, rng)
            labels = data.labels[idx]
            zero_grads(params)
            try:
                out = net.forward(images)
                terms = net.loss_terms(out, labels, images)
                backward(terms.total)
                adam_step(params, None, state)
            except NumericalError as e:
                ids = [data.ids[i] for i in idx]
                if out_dir is not None:
                    write_json_atomic(out_dir / f"fold{fold}_nonfinite_batch.json",
                                      {"fold": fold, "epoch": epoch, "records": ids, "error": str(e)})
                raise NumericalError(f"fold {fold} epoch {epoch}: {e} (batch records: {', '.join(ids)})") from e
            n = len(idx)
            loss_sum += float(terms.total.item()) * n
            if terms.reconstruction is not None:
                recon_seen = True
                recon_sum += float(terms.reconstruction.item()) * n
            correct += _batch_accuracy(net, out.class_scores.data, labels)

        record = EpochRecord(
            fold=fold,
            epoch=epoch,
            train_loss=loss_sum / len(data),
            train_acc=correct / len(data),
            recon_loss=recon_sum / len(data) if recon_seen else None,
        )
        result.epochs.append(record)
        _append_log(log_path, record)
        logger.info("fold %d epoch %d: loss %.4f acc %.3f%s", fold, epoch, record.train_loss,
                    record.train_acc,
                    f" recon {record.recon_loss:.4f}" if record.recon_loss is not None else "")

        if validation is not None and len(validation) > 0:
            acc = evaluate_accuracy(net, validation, config.batch_size)
            if result.best_val_accuracy is None or acc > result.best_val_accuracy:
                result.best_val_accuracy = acc
                if out_dir is not None:
                    result.best_checkpoint = save_checkpoint(
                        net, out_dir / f"fold{fold}_best.ckpt",
                        extra={"fold": fold, "epoch": epoch, "val_accuracy": acc},
                    )
                logger.info("fold %d epoch %d: new best validation accuracy %.3f", fold, epoch, acc)

        if epoch == config.epochs and out_dir is not None:
            result.checkpoint = save_checkpoint(net, out_dir / f"fold{fold}_epoch{epoch}.ckpt",
                                                extra={"fold": fold, "epoch": epoch})
    return result
