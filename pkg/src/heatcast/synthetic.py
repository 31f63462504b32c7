"""Seeded synthetic incident process: Gaussian hotspots drifting across a fixed box."""

from __future__ import annotations

import csv
import io
import math
from datetime import date, timedelta

import numpy as np

from .ingest import BoundingBox, DatasetSchema, IncidentRecord, group_by_day
from .raster import GaussianSpec, GridSpec, HeatMap, build_heatmaps

SYNTHETIC_BBOX = BoundingBox(39.05, 39.23, -84.72, -84.36)
SYNTHETIC_START = date(2020, 1, 1)


def synthetic_records(
    num_days: int,
    seed: int = 0,
    bbox: BoundingBox = SYNTHETIC_BBOX,
    rate: float = 6.0,
    spread: float = 0.07,
    period: float = 60.0,
) -> list[IncidentRecord]:
    """Incidents from one hotspot orbiting the box centre plus a fixed secondary hotspot.

    Positions are in box-relative units; ``spread`` is the hotspot standard deviation
    and ``period`` the number of days per orbit. Daily counts are Poisson.
    """
    rng = np.random.default_rng(seed)
    records = []
    for day in range(1, num_days + 1):
        angle = 2.0 * math.pi * day / period
        centres = [(0.5 + 0.25 * math.cos(angle), 0.5 + 0.25 * math.sin(angle)), (0.3, 0.7)]
        weights = [0.75, 0.25]
        count = rng.poisson(rate)
        which = rng.choice(len(centres), size=count, p=weights)
        for k in which:
            u, v = np.clip(rng.normal(centres[k], spread), 0.0, 1.0)
            lat = bbox.lat_min + u * (bbox.lat_max - bbox.lat_min)
            lon = bbox.lon_min + v * (bbox.lon_max - bbox.lon_min)
            records.append(IncidentRecord(day, float(lat), float(lon)))
    return records


def synthetic_schema(num_days: int) -> DatasetSchema:
    return DatasetSchema(
        name="synthetic",
        date_column="date",
        lat_column="latitude",
        lon_column="longitude",
        date_format="%Y-%m-%d",
        start_date=SYNTHETIC_START,
        end_date=SYNTHETIC_START + timedelta(days=num_days - 1),
    )


def synthetic_csv(num_days: int, seed: int = 0, **kwargs) -> str:
    """The synthetic process rendered in the ``synthetic`` schema's CSV layout."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["date", "latitude", "longitude"])
    for rec in synthetic_records(num_days, seed, **kwargs):
        when = SYNTHETIC_START + timedelta(days=rec.day - 1)
        writer.writerow([when.isoformat(), f"{rec.lat:.6f}", f"{rec.lon:.6f}"])
    return buf.getvalue()


def synthetic_heatmaps(
    num_days: int, size: int = 16, sigma: float = 1.5, seed: int = 0, **kwargs
) -> list[HeatMap]:
    """Smoothed daily heatmaps for the synthetic process on a ``size x size`` grid."""
    records = synthetic_records(num_days, seed, **kwargs)
    grid = GridSpec(size, size, SYNTHETIC_BBOX)
    return build_heatmaps(group_by_day(records, num_days), grid, GaussianSpec(sigma))
