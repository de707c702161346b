"""Per-image votes and their confidence-weighted per-polyp aggregate."""

from __future__ import annotations

import logging
from collections import defaultdict
from collections.abc import Iterable, Sequence
from dataclasses import asdict, dataclass
from typing import Any

import numpy as np

from dcaps.core.errors import ConfigError, DataError
from dcaps.data.manifest import Focus, Light

logger = logging.getLogger(__name__)

POSITIVE_THRESHOLD = 0.5


@dataclass(frozen=True)
class ImageVote:
    polyp_id: str
    image_id: str
    score: float
    confidence: float
    light: Light = Light.NONE
    focus: Focus = Focus.NONE

    @property
    def predicted(self) -> int:
        return classify(self.score)

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        data["light"] = str(self.light)
        data["focus"] = str(self.focus)
        return data

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ImageVote:
        return cls(
            polyp_id=str(data["polyp_id"]),
            image_id=str(data["image_id"]),
            score=float(data["score"]),
            confidence=float(data["confidence"]),
            light=Light(data.get("light", "none")),
            focus=Focus(data.get("focus", "none")),
        )


def classify(score: float) -> int:
    """Ties go to the positive class."""
    return 1 if score >= POSITIVE_THRESHOLD else 0


def binary_confidence(score: float) -> float:
    return min(2.0 * abs(score - POSITIVE_THRESHOLD), 1.0)


def positive_score(class_scores: Sequence[float]) -> tuple[float, float]:
    """(P(positive), confidence) from one image's class scores.

    A single score is used as is. With two class capsules the positive
    score is the second capsule's share of the two magnitudes (0.5 when
    both are zero) and the confidence is the normalized margin.

    :raises ConfigError: more than two class scores.
    """
    s = np.asarray(class_scores, dtype=np.float64).reshape(-1)
    if s.size == 1:
        score = float(s[0])
        return score, binary_confidence(score)
    if s.size != 2:
        raise ConfigError(f"polyp voting needs one or two class scores, got {s.size}")
    total = float(s[0] + s[1])
    score = float(s[1] / total) if total > 0 else 0.5
    top = float(s.max())
    confidence = abs(float(s[1] - s[0])) / max(top, 1e-12)
    return score, confidence


def aggregate_polyp(votes: Sequence[ImageVote]) -> tuple[float, int]:
    """Confidence-weighted mean score of one polyp's votes and its class.

    Falls back to the unweighted mean when every confidence is zero.

    :raises DataError: empty vote list or votes from several polyps.
    """
    if not votes:
        raise DataError("cannot aggregate an empty vote list")
    polyps = {v.polyp_id for v in votes}
    if len(polyps) != 1:
        raise DataError(f"votes span several polyps: {', '.join(sorted(polyps))}")
    weights = np.array([v.confidence for v in votes], dtype=np.float64)
    scores = np.array([v.score for v in votes], dtype=np.float64)
    total = weights.sum()
    if np.all(scores == scores[0]):
        score = float(scores[0])
    elif total > 0:
        score = float(np.dot(weights, scores) / total)
    else:
        score = float(scores.mean())
    return score, classify(score)


def group_by_polyp(votes: Iterable[ImageVote]) -> dict[str, list[ImageVote]]:
    grouped: dict[str, list[ImageVote]] = defaultdict(list)
    for v in votes:
        grouped[v.polyp_id].append(v)
    return dict(sorted(grouped.items()))


def sort_votes(votes: Iterable[ImageVote]) -> list[ImageVote]:
    return sorted(votes, key=lambda v: (v.polyp_id, v.image_id))
