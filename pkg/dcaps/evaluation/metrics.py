"""Confusion counts and accuracy / sensitivity / specificity."""

from __future__ import annotations

from collections.abc import Iterable
from dataclasses import dataclass
from typing import NamedTuple

from dcaps.core.errors import DataError


@dataclass
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __post_init__(self) -> None:
        for name in ("tp", "fp", "tn", "fn"):
            if getattr(self, name) < 0:
                raise DataError(f"confusion count {name} must be >= 0, got {getattr(self, name)}")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def add(self, predicted: int, actual: int) -> None:
        if actual:
            if predicted:
                self.tp += 1
            else:
                self.fn += 1
        elif predicted:
            self.fp += 1
        else:
            self.tn += 1

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[int, int]]) -> ConfusionCounts:
        """Count ``(predicted, actual)`` pairs."""
        counts = cls()
        for predicted, actual in pairs:
            counts.add(predicted, actual)
        return counts

    def to_dict(self) -> dict[str, int]:
        return {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn}


class Metrics(NamedTuple):
    """``None`` marks an undefined ratio (zero denominator)."""

    acc: float | None
    sen: float | None
    spe: float | None


def _ratio(num: int, den: int) -> float | None:
    return num / den if den else None


def metrics(counts: ConfusionCounts) -> Metrics:
    """:raises DataError: no evaluated units."""
    if counts.total == 0:
        raise DataError("metrics need at least one evaluated unit")
    return Metrics(
        acc=(counts.tp + counts.tn) / counts.total,
        sen=_ratio(counts.tp, counts.tp + counts.fn),
        spe=_ratio(counts.tn, counts.tn + counts.fp),
    )


def format_ratio(value: float | None, digits: int = 2) -> str:
    """Percentage text, ``n/a`` for undefined."""
    return "n/a" if value is None else f"{100 * value:.{digits}f}"
