"""The three binary class splits.

=====  =====================  ==================
 exp    positive (1)           dropped
=====  =====================  ==================
 1      adenoma                serrated
 2      adenoma, serrated      nothing
 3      serrated               adenoma
=====  =====================  ==================

Hyperplastic is the negative class (0) in all three.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

from dcaps.core.errors import ConfigError, DataError
from dcaps.data.manifest import Label, SampleRecord

EXPERIMENTS: dict[int, dict[Label, int]] = {
    1: {Label.HYPERPLASTIC: 0, Label.ADENOMA: 1},
    2: {Label.HYPERPLASTIC: 0, Label.ADENOMA: 1, Label.SERRATED: 1},
    3: {Label.HYPERPLASTIC: 0, Label.SERRATED: 1},
}


@dataclass(frozen=True)
class ExperimentSplit:
    experiment_id: int
    records: tuple[SampleRecord, ...]
    labels: tuple[int, ...]

    def polyp_labels(self) -> dict[str, int]:
        return {r.polyp_id: y for r, y in zip(self.records, self.labels, strict=True)}

    def __len__(self) -> int:
        return len(self.records)


def build_experiment(records: Sequence[SampleRecord], experiment_id: int) -> ExperimentSplit:
    """Filter and relabel ``records`` for one experiment.

    :raises ConfigError: unknown experiment id.
    :raises DataError: the split is empty or contains a single class.
    """
    try:
        mapping = EXPERIMENTS[int(experiment_id)]
    except (KeyError, ValueError, TypeError):
        raise ConfigError(f"experiment id must be one of 1, 2, 3; got {experiment_id!r}") from None
    kept = [r for r in records if r.label in mapping]
    labels = tuple(mapping[r.label] for r in kept)
    classes = set(labels)
    if len(classes) < 2:
        which = "no records" if not classes else f"only class {classes.pop()}"
        raise DataError(f"experiment {experiment_id} has {which} after filtering; need both classes")
    return ExperimentSplit(int(experiment_id), tuple(kept), labels)
