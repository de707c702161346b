from dcaps.evaluation.metrics import ConfusionCounts, Metrics, metrics
from dcaps.evaluation.report import (
    COLUMN_HEADER,
    COLUMNS,
    Report,
    emit_report,
    parse_report,
    stratified_report,
)
from dcaps.evaluation.votes import ImageVote, aggregate_polyp

__all__ = [
    "COLUMNS",
    "COLUMN_HEADER",
    "ConfusionCounts",
    "ImageVote",
    "Metrics",
    "Report",
    "aggregate_polyp",
    "emit_report",
    "metrics",
    "parse_report",
    "stratified_report",
]
