"""Group-aware stratified k-fold partitions.

Stratification works on groups (polyps, or patients): every record of a
group lands in the same fold. Groups of each class are shuffled with the
seed and dealt round-robin across folds, continuing the deal from where
the previous class stopped, so both per-class and total fold sizes stay
within one group of the ideal.
"""

from __future__ import annotations

import logging
from collections.abc import Hashable, Sequence
from dataclasses import dataclass

import numpy as np

from dcaps.core.errors import ConfigError, DataError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Fold:
    index: int
    train: tuple[int, ...]
    test: tuple[int, ...]


def _group_labels(labels: Sequence[int], group_ids: Sequence[Hashable]) -> dict[Hashable, int]:
    if len(labels) != len(group_ids):
        raise DataError(f"{len(labels)} labels but {len(group_ids)} group ids")
    label_of: dict[Hashable, int] = {}
    for y, g in zip(labels, group_ids, strict=True):
        prev = label_of.setdefault(g, int(y))
        if prev != int(y):
            raise DataError(f"group {g!r} mixes classes {prev} and {int(y)}")
    return label_of


def _groups_by_class(label_of: dict[Hashable, int], rng: np.random.Generator) -> dict[int, list[Hashable]]:
    by_class: dict[int, list[Hashable]] = {}
    for g, y in sorted(label_of.items(), key=lambda kv: str(kv[0])):
        by_class.setdefault(y, []).append(g)
    return {y: [groups[i] for i in rng.permutation(len(groups))] for y, groups in sorted(by_class.items())}


def stratified_kfold(labels: Sequence[int], k: int, group_ids: Sequence[Hashable],
                     seed: int) -> list[Fold]:
    """Partition record indices into ``k`` (train, test) folds.

    :raises ConfigError: ``k < 2`` or ``k`` exceeds the number of groups.
    :raises DataError: a group mixes classes.
    """
    if k < 2:
        raise ConfigError(f"fold count must be >= 2, got {k}")
    label_of = _group_labels(labels, group_ids)
    rng = np.random.default_rng(seed)
    by_class = _groups_by_class(label_of, rng)
    if k > len(label_of):
        counts = ", ".join(f"class {y}: {len(g)}" for y, g in by_class.items())
        raise ConfigError(f"cannot make {k} folds from {len(label_of)} groups ({counts})")
    smallest = min(len(g) for g in by_class.values())
    if k > smallest:
        logger.warning(
            "%d folds but the smallest class has only %d groups; some folds will lack that class",
            k, smallest,
        )

    fold_of: dict[Hashable, int] = {}
    cursor = 0
    for groups in by_class.values():
        for g in groups:
            fold_of[g] = cursor % k
            cursor += 1

    assignment = np.array([fold_of[g] for g in group_ids])
    everything = np.arange(len(group_ids))
    return [
        Fold(
            index=f,
            train=tuple(int(i) for i in everything[assignment != f]),
            test=tuple(int(i) for i in everything[assignment == f]),
        )
        for f in range(k)
    ]


def split_validation(labels: Sequence[int], group_ids: Sequence[Hashable], fraction: float,
                     seed: int) -> tuple[list[int], list[int]]:
    """Hold back about ``fraction`` of each class's groups; returns (train, validation) positions.

    A class with at least two groups always contributes one validation
    group and keeps at least one for training.
    """
    if not 0.0 <= fraction < 1.0:
        raise ConfigError(f"validation_fraction must be in [0, 1), got {fraction}")
    if fraction == 0.0:
        return list(range(len(labels))), []
    label_of = _group_labels(labels, group_ids)
    by_class = _groups_by_class(label_of, np.random.default_rng(seed))
    held: set[Hashable] = set()
    for groups in by_class.values():
        if len(groups) < 2:
            continue
        n = min(max(1, round(fraction * len(groups))), len(groups) - 1)
        held.update(groups[:n])
    train = [i for i, g in enumerate(group_ids) if g not in held]
    val = [i for i, g in enumerate(group_ids) if g in held]
    return train, val
