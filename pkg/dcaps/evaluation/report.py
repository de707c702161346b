"""Modality / focus stratified report.

Column order is fixed::

    All Images, All Polyps, NBI, NBI-F, NBI-N, WL, WL-F, WL-N, Near, Far

"All Images" scores each image on its own. Every other column aggregates
per polyp over only the votes that fall in the stratum; a polyp with no
such votes is left out of that column. Empty columns stay in the table as
n/a so every report has the same shape.

``emit_report`` writes ``<stem>.json`` (undefined values as ``null``) and
an aligned ``<stem>.txt`` rendered from ``templates/table.txt.j2``.
"""

from __future__ import annotations

import json
import logging
import os
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from jinja2 import Environment, FileSystemLoader

from dcaps.core.atomic import PathLike, write_json_atomic, write_text_atomic
from dcaps.core.errors import DataError
from dcaps.data.manifest import Focus, Light
from dcaps.evaluation.metrics import ConfusionCounts, Metrics, format_ratio, metrics
from dcaps.evaluation.votes import ImageVote, aggregate_polyp, group_by_polyp

logger = logging.getLogger(__name__)

COLUMNS = ("All Images", "All Polyps", "NBI", "NBI-F", "NBI-N", "WL", "WL-F", "WL-N", "Near", "Far")
COLUMN_HEADER = ", ".join(COLUMNS)
REPORT_FORMAT = "dcaps-report/1"

TEMPLATE_DIR = os.path.join(os.path.dirname(os.path.dirname(__file__)), "templates")
_env = Environment(loader=FileSystemLoader(TEMPLATE_DIR), autoescape=False)

VotePredicate = Callable[[ImageVote], bool]

POLYP_STRATA: dict[str, VotePredicate] = {
    "All Polyps": lambda v: True,
    "NBI": lambda v: v.light is Light.NBI,
    "NBI-F": lambda v: v.light is Light.NBI and v.focus is Focus.FAR,
    "NBI-N": lambda v: v.light is Light.NBI and v.focus is Focus.NEAR,
    "WL": lambda v: v.light is Light.WL,
    "WL-F": lambda v: v.light is Light.WL and v.focus is Focus.FAR,
    "WL-N": lambda v: v.light is Light.WL and v.focus is Focus.NEAR,
    "Near": lambda v: v.focus is Focus.NEAR,
    "Far": lambda v: v.focus is Focus.FAR,
}


@dataclass
class StratumResult:
    """One column. ``computed`` is False when the column was not requested."""

    column: str
    counts: ConfusionCounts = field(default_factory=ConfusionCounts)
    computed: bool = True

    @property
    def units(self) -> int:
        return self.counts.total

    @property
    def metrics(self) -> Metrics:
        if not self.computed or self.units == 0:
            return Metrics(None, None, None)
        return metrics(self.counts)

    def to_dict(self) -> dict[str, Any]:
        m = self.metrics
        return {
            "computed": self.computed,
            "units": self.units,
            "counts": self.counts.to_dict(),
            "acc": m.acc,
            "sen": m.sen,
            "spe": m.spe,
        }

    @classmethod
    def from_dict(cls, column: str, data: Mapping[str, Any]) -> StratumResult:
        return cls(column=column, counts=ConfusionCounts(**data["counts"]),
                   computed=bool(data.get("computed", True)))


@dataclass
class Report:
    strata: dict[str, StratumResult]
    title: str = ""

    def __getitem__(self, column: str) -> StratumResult:
        return self.strata[column]

    def to_dict(self) -> dict[str, Any]:
        return {
            "format": REPORT_FORMAT,
            "title": self.title,
            "columns": list(COLUMNS),
            "strata": {c: self.strata[c].to_dict() for c in COLUMNS},
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> Report:
        if data.get("format") != REPORT_FORMAT:
            raise DataError(f"not a dcaps report (format {data.get('format')!r})")
        if list(data.get("columns", [])) != list(COLUMNS):
            raise DataError(f"report columns must be exactly: {COLUMN_HEADER}")
        strata = {c: StratumResult.from_dict(c, data["strata"][c]) for c in COLUMNS}
        return cls(strata=strata, title=str(data.get("title", "")))


def stratified_report(votes: Sequence[ImageVote], labels: Mapping[str, int],
                      include_images: bool = True, title: str = "") -> Report:
    """Build every column of the report from image votes and polyp labels.

    :raises DataError: a vote's polyp has no label.
    """
    missing = sorted({v.polyp_id for v in votes} - set(labels))
    if missing:
        raise DataError(f"no label for polyp(s): {', '.join(missing[:5])}")

    strata: dict[str, StratumResult] = {}
    images = StratumResult("All Images", computed=include_images)
    if include_images:
        for v in votes:
            images.counts.add(v.predicted, labels[v.polyp_id])
    strata["All Images"] = images

    by_polyp = group_by_polyp(votes)
    for column, keep in POLYP_STRATA.items():
        result = StratumResult(column)
        for polyp_id, polyp_votes in by_polyp.items():
            selected = [v for v in polyp_votes if keep(v)]
            if not selected:
                continue
            _, predicted = aggregate_polyp(selected)
            result.counts.add(predicted, labels[polyp_id])
        strata[column] = result
    return Report(strata=strata, title=title)


# ---------------------------------------------------------------------------
# Text rendering
# ---------------------------------------------------------------------------


@dataclass
class TableRow:
    label: str
    cells: list[str]


def render_table(title: str, corner: str, headers: Sequence[str], rows: Sequence[TableRow],
                 notes: Sequence[str] = ()) -> str:
    """Right-aligned plain-text table from ``templates/table.txt.j2``."""
    widths = [len(h) for h in headers]
    for r in rows:
        widths = [max(w, len(c)) for w, c in zip(widths, r.cells, strict=True)]
    label_width = max([len(corner)] + [len(r.label) for r in rows])
    total_width = label_width + sum(w + 2 for w in widths)
    template = _env.get_template("table.txt.j2")
    return template.render(
        title=title, notes=list(notes), corner=corner, headers=list(headers),
        rows=list(rows), widths=widths, label_width=label_width, total_width=total_width,
    )


def render_report_text(report: Report) -> str:
    rows = []
    for name in ("acc", "sen", "spe"):
        rows.append(TableRow(name, [
            format_ratio(getattr(report[c].metrics, name)) for c in COLUMNS
        ]))
    rows.append(TableRow("n", [
        str(report[c].units) if report[c].computed else "n/a" for c in COLUMNS
    ]))
    return render_table(
        title=report.title or "D-Caps stratified report",
        corner="metric",
        headers=COLUMNS,
        rows=rows,
        notes=[f"columns: {COLUMN_HEADER}", "values in %, n = evaluated images / polyps"],
    )


def emit_report(report: Report, out_dir: PathLike, stem: str = "report") -> tuple[Path, Path]:
    """Write ``<stem>.json`` and ``<stem>.txt`` into ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    json_path = out_dir / f"{stem}.json"
    text_path = out_dir / f"{stem}.txt"
    write_json_atomic(json_path, report.to_dict())
    write_text_atomic(text_path, render_report_text(report))
    return json_path, text_path


def parse_report(path: PathLike) -> Report:
    """Read a JSON report written by ``emit_report``."""
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise DataError(f"cannot read report {path}: {e}") from e
    return Report.from_dict(data)
