"""Incident CSV ingestion: rows -> day-indexed (day, lat, lon) records."""

from __future__ import annotations

import csv
import io
import json
import re
from dataclasses import asdict, dataclass, field, fields
from datetime import date, datetime
from importlib import resources
from typing import Iterable, Mapping, Sequence, TextIO


class IngestError(ValueError):
    """Fatal ingestion problem (bad schema, empty input, too many skipped rows)."""


@dataclass(frozen=True)
class IncidentRecord:
    day: int
    lat: float
    lon: float

    def __post_init__(self):
        if self.day < 1:
            raise ValueError(f"day index must be >= 1, got {self.day}")
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"latitude out of range: {self.lat}")
        if not -180.0 <= self.lon <= 180.0:
            raise ValueError(f"longitude out of range: {self.lon}")


@dataclass(frozen=True)
class DatasetSchema:
    """Column mapping for one incident CSV layout.

    When ``lat_column == lon_column`` the column holds a combined
    ``"... (lat, lon)"`` point string, as in the Connecticut export.
    """

    name: str
    date_column: str
    lat_column: str
    lon_column: str
    date_format: str
    start_date: date
    end_date: date

    def __post_init__(self):
        if self.start_date > self.end_date:
            raise ValueError("schema start date is after end date")

    @property
    def num_days(self) -> int:
        return (self.end_date - self.start_date).days + 1

    @classmethod
    def from_dict(cls, raw: Mapping) -> "DatasetSchema":
        values = dict(raw)
        for key in ("start_date", "end_date"):
            if isinstance(values.get(key), str):
                values[key] = date.fromisoformat(values[key])
        return cls(**{f.name: values[f.name] for f in fields(cls)})

    def to_dict(self) -> dict:
        out = asdict(self)
        out["start_date"] = self.start_date.isoformat()
        out["end_date"] = self.end_date.isoformat()
        return out


@dataclass(frozen=True)
class BoundingBox:
    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float

    def __post_init__(self):
        if not (self.lat_min < self.lat_max and self.lon_min < self.lon_max):
            raise ValueError(f"degenerate bounding box: {self}")

    def contains(self, lat: float, lon: float) -> bool:
        return self.lat_min <= lat <= self.lat_max and self.lon_min <= lon <= self.lon_max


@dataclass
class SkipReport:
    missing_date: int = 0
    bad_date: int = 0
    out_of_range_date: int = 0
    missing_coord: int = 0
    bad_coord: int = 0
    out_of_range_coord: int = 0
    outside_bbox: int = 0

    @property
    def total(self) -> int:
        return sum(getattr(self, f.name) for f in fields(self))

    def as_dict(self) -> dict[str, int]:
        return asdict(self)


def load_presets() -> dict[str, dict]:
    text = resources.files("heatcast").joinpath("presets.json").read_text(encoding="utf-8")
    return json.loads(text)


def preset_schema(name: str, overrides: Mapping | None = None) -> DatasetSchema:
    presets = load_presets()["schemas"]
    if name not in presets:
        raise IngestError(f"unknown schema preset {name!r}; known: {sorted(presets)}")
    raw = dict(presets[name], name=name)
    raw.update(overrides or {})
    return DatasetSchema.from_dict(raw)


_POINT = re.compile(r"\(\s*([-+0-9.eE]+)\s*,\s*([-+0-9.eE]+)\s*\)")


def _parse_coords(row: Mapping[str, str], schema: DatasetSchema, report: SkipReport):
    if schema.lat_column == schema.lon_column:
        raw = (row.get(schema.lat_column) or "").strip()
        if not raw:
            report.missing_coord += 1
            return None
        match = _POINT.search(raw)
        if match is None:
            report.bad_coord += 1
            return None
        lat_s, lon_s = match.groups()
    else:
        lat_s = (row.get(schema.lat_column) or "").strip()
        lon_s = (row.get(schema.lon_column) or "").strip()
        if not lat_s or not lon_s:
            report.missing_coord += 1
            return None
    try:
        lat, lon = float(lat_s), float(lon_s)
    except ValueError:
        report.bad_coord += 1
        return None
    if not (-90.0 <= lat <= 90.0 and -180.0 <= lon <= 180.0):
        report.out_of_range_coord += 1
        return None
    return lat, lon


def parse_incidents(
    stream: TextIO | str,
    schema: DatasetSchema,
    max_skip_fraction: float = 0.5,
) -> tuple[list[IncidentRecord], SkipReport]:
    """Parse a header-first CSV into records, counting every skipped row by reason.

    Raises IngestError when the file is empty, a schema column is missing from the
    header, or more than ``max_skip_fraction`` of the data rows are skipped.
    """
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    reader = csv.DictReader(stream)
    header = reader.fieldnames
    if not header:
        raise IngestError("empty CSV: no header row")
    missing = [c for c in {schema.date_column, schema.lat_column, schema.lon_column} if c not in header]
    if missing:
        raise IngestError(f"schema columns missing from header: {sorted(missing)}")

    records: list[IncidentRecord] = []
    report = SkipReport()
    rows = 0
    for row in reader:
        rows += 1
        raw_date = (row.get(schema.date_column) or "").strip()
        if not raw_date:
            report.missing_date += 1
            continue
        try:
            when = datetime.strptime(raw_date, schema.date_format).date()
        except ValueError:
            report.bad_date += 1
            continue
        if not schema.start_date <= when <= schema.end_date:
            report.out_of_range_date += 1
            continue
        coords = _parse_coords(row, schema, report)
        if coords is None:
            continue
        day = (when - schema.start_date).days + 1
        records.append(IncidentRecord(day, coords[0], coords[1]))

    if rows == 0:
        raise IngestError("empty CSV: header but no data rows")
    if report.total > max_skip_fraction * rows:
        raise IngestError(
            f"{report.total} of {rows} rows skipped ({report.as_dict()}); check the schema configuration"
        )
    return records, report


def group_by_day(records: Iterable[IncidentRecord], num_days: int) -> list[list[IncidentRecord]]:
    """Bucket records into ``num_days`` per-day lists (index 0 holds day 1)."""
    days: list[list[IncidentRecord]] = [[] for _ in range(num_days)]
    for rec in records:
        if rec.day > num_days:
            raise ValueError(f"record day {rec.day} beyond the {num_days}-day range")
        days[rec.day - 1].append(rec)
    return days


def resolve_bbox(
    records: Sequence[IncidentRecord],
    configured: BoundingBox | Mapping | None = None,
    margin: float = 0.02,
) -> BoundingBox:
    """Return the configured box, or the tight box over ``records`` widened by ``margin`` per side."""
    if configured is not None:
        return configured if isinstance(configured, BoundingBox) else BoundingBox(**configured)
    if not records:
        raise IngestError("no records and no configured bounding box")
    lats = [r.lat for r in records]
    lons = [r.lon for r in records]
    lat_lo, lat_hi, lon_lo, lon_hi = min(lats), max(lats), min(lons), max(lons)
    if lat_lo == lat_hi or lon_lo == lon_hi:
        raise IngestError("records span a degenerate box; configure an explicit bounding box")
    dlat, dlon = (lat_hi - lat_lo) * margin, (lon_hi - lon_lo) * margin
    return BoundingBox(lat_lo - dlat, lat_hi + dlat, lon_lo - dlon, lon_hi + dlon)


def filter_bbox(
    records: Iterable[IncidentRecord], bbox: BoundingBox, report: SkipReport | None = None
) -> list[IncidentRecord]:
    """Drop records outside ``bbox``; the drop count goes to ``report.outside_bbox``."""
    kept = []
    for rec in records:
        if bbox.contains(rec.lat, rec.lon):
            kept.append(rec)
        elif report is not None:
            report.outside_bbox += 1
    return kept


@dataclass
class RecordSet:
    """Everything the rasterizer needs from an ingestion run."""

    schema: DatasetSchema
    records: list[IncidentRecord]
    skipped: SkipReport = field(default_factory=SkipReport)

    def to_json(self) -> str:
        return json.dumps(
            {
                "schema": self.schema.to_dict(),
                "num_days": self.schema.num_days,
                "skipped": self.skipped.as_dict(),
                "records": [[r.day, r.lat, r.lon] for r in self.records],
            },
            indent=None,
        )

    @classmethod
    def from_json(cls, text: str) -> "RecordSet":
        raw = json.loads(text)
        schema = DatasetSchema.from_dict(raw["schema"])
        records = [IncidentRecord(int(d), float(a), float(b)) for d, a, b in raw["records"]]
        return cls(schema, records, SkipReport(**raw.get("skipped", {})))
