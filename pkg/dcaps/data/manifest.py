"""Dataset manifest: one comma-separated row per image.

Header (exact)::

    image_path,polyp_id,patient_id,label,device,light,focus

``image_path`` is relative to the manifest's directory (absolute paths are
kept as they are). Enum values are lowercase except ``NBI``/``WL``; a
missing tag is written ``none``.
"""

from __future__ import annotations

import csv
import io
import logging
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, fields
try:
    from enum import StrEnum
except ImportError:  # Python < 3.11
    from enum import Enum

    class StrEnum(str, Enum):
        pass
from pathlib import Path

from dcaps.core.atomic import PathLike, write_text_atomic
from dcaps.core.errors import DataError, ManifestError

logger = logging.getLogger(__name__)


class Label(StrEnum):
    """Polyp histology. Hyperplastic is benign; the other two are premalignant."""

    HYPERPLASTIC = "hyperplastic"
    SERRATED = "serrated"
    ADENOMA = "adenoma"

    def __str__(self) -> str:
        return self.value


class Device(StrEnum):
    STANDARD = "standard"
    DUAL_FOCUS = "dual-focus"

    def __str__(self) -> str:
        return self.value


class Light(StrEnum):
    NBI = "NBI"
    WL = "WL"
    NONE = "none"

    def __str__(self) -> str:
        return self.value


class Focus(StrEnum):
    NEAR = "near"
    FAR = "far"
    NONE = "none"

    def __str__(self) -> str:
        return self.value


MANIFEST_HEADER = ("image_path", "polyp_id", "patient_id", "label", "device", "light", "focus")


@dataclass(frozen=True)
class SampleRecord:
    image_path: str
    polyp_id: str
    patient_id: str
    label: Label
    device: Device = Device.STANDARD
    light: Light = Light.NONE
    focus: Focus = Focus.NONE

    @property
    def image_id(self) -> str:
        return self.image_path

    @property
    def tagged(self) -> bool:
        return self.light is not Light.NONE or self.focus is not Focus.NONE

    def to_row(self) -> list[str]:
        return [str(getattr(self, f.name)) for f in fields(self)]


@dataclass
class Manifest:
    """Records plus the directory their relative image paths resolve against."""

    records: list[SampleRecord]
    root: Path

    def __len__(self) -> int:
        return len(self.records)

    def image_file(self, record: SampleRecord) -> Path:
        path = Path(record.image_path)
        return path if path.is_absolute() else self.root / path


_ENUMS = {"label": Label, "device": Device, "light": Light, "focus": Focus}


def _parse_enum(name: str, raw: str, line: int):
    enum = _ENUMS[name]
    try:
        return enum(raw.strip())
    except ValueError:
        allowed = ", ".join(m.value for m in enum)
        raise ManifestError(f"invalid {name} {raw!r}; expected one of {allowed}", line=line) from None


def validate_records(records: Sequence[SampleRecord], lines: Sequence[int] | None = None) -> None:
    """Cross-record invariants.

    - dual-focus records carry both a light and a focus tag
    - a polyp belongs to exactly one patient and has one histology
    - a polyp has at most one image per tagged (light, focus) mode

    :raises ManifestError: naming the polyp (and line, when known).
    """
    patient_of: dict[str, str] = {}
    label_of: dict[str, Label] = {}
    seen_modes: dict[tuple[str, Light, Focus], int] = {}
    for pos, rec in enumerate(records):
        line = lines[pos] if lines is not None else None
        if rec.device is Device.DUAL_FOCUS and (rec.light is Light.NONE or rec.focus is Focus.NONE):
            raise ManifestError(
                f"polyp {rec.polyp_id}: dual-focus image {rec.image_path} needs light and focus tags",
                line=line,
            )
        prev_patient = patient_of.setdefault(rec.polyp_id, rec.patient_id)
        if prev_patient != rec.patient_id:
            raise ManifestError(
                f"polyp {rec.polyp_id} is assigned to patients {prev_patient} and {rec.patient_id}",
                line=line,
            )
        prev_label = label_of.setdefault(rec.polyp_id, rec.label)
        if prev_label is not rec.label:
            raise ManifestError(
                f"polyp {rec.polyp_id} has conflicting labels {prev_label} and {rec.label}",
                line=line,
            )
        if rec.tagged:
            key = (rec.polyp_id, rec.light, rec.focus)
            if key in seen_modes:
                raise ManifestError(
                    f"polyp {rec.polyp_id} has more than one {rec.light}/{rec.focus} image",
                    line=line,
                )
            seen_modes[key] = pos


def parse_manifest(text: str) -> list[SampleRecord]:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise ManifestError("empty manifest (missing header)", line=1) from None
    if tuple(h.strip() for h in header) != MANIFEST_HEADER:
        raise ManifestError(f"header must be {','.join(MANIFEST_HEADER)}", line=1)

    records: list[SampleRecord] = []
    lines: list[int] = []
    for row in reader:
        line = reader.line_num
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != len(MANIFEST_HEADER):
            raise ManifestError(f"expected {len(MANIFEST_HEADER)} fields, got {len(row)}", line=line)
        image_path, polyp_id, patient_id = (cell.strip() for cell in row[:3])
        for name, value in (("image_path", image_path), ("polyp_id", polyp_id), ("patient_id", patient_id)):
            if not value:
                raise ManifestError(f"empty {name}", line=line)
        records.append(SampleRecord(
            image_path=image_path,
            polyp_id=polyp_id,
            patient_id=patient_id,
            label=_parse_enum("label", row[3], line),
            device=_parse_enum("device", row[4], line),
            light=_parse_enum("light", row[5], line),
            focus=_parse_enum("focus", row[6], line),
        ))
        lines.append(line)
    validate_records(records, lines)
    return records


def load_manifest(path: PathLike) -> Manifest:
    """Read and validate a manifest file.

    :raises DataError: the file cannot be read.
    :raises ManifestError: a row is malformed or an invariant is violated.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as e:
        raise DataError(f"cannot read manifest {path}: {e}") from e
    records = parse_manifest(text)
    logger.info("loaded %d records (%d polyps) from %s", len(records),
                len({r.polyp_id for r in records}), path)
    return Manifest(records=records, root=path.resolve().parent)


def format_manifest(records: Iterable[SampleRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(MANIFEST_HEADER)
    for rec in records:
        writer.writerow(rec.to_row())
    return buf.getvalue()


def write_manifest(path: PathLike, records: Sequence[SampleRecord]) -> None:
    validate_records(records)
    write_text_atomic(path, format_manifest(records))
