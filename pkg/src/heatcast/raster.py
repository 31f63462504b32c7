"""Daily incident lists -> count heatmaps -> Gaussian-smoothed heatmaps, plus PGM/PNG I/O."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.signal import convolve2d

from .ingest import BoundingBox, IncidentRecord

MAX_INTENSITY = 255.0


@dataclass(frozen=True)
class GridSpec:
    height: int
    width: int
    bbox: BoundingBox

    def __post_init__(self):
        if self.height <= 0 or self.width <= 0 or self.height % 2 or self.width % 2:
            raise ValueError(f"grid extents must be positive and even, got {self.height}x{self.width}")

    def cell(self, lat: float, lon: float) -> tuple[int, int]:
        """Row/column of a coordinate; north is row 0, the closed top edge falls in the last cell."""
        b = self.bbox
        row = int(math.floor((b.lat_max - lat) / (b.lat_max - b.lat_min) * self.height))
        col = int(math.floor((lon - b.lon_min) / (b.lon_max - b.lon_min) * self.width))
        return min(max(row, 0), self.height - 1), min(max(col, 0), self.width - 1)


@dataclass(frozen=True)
class GaussianSpec:
    sigma: float = 1.5

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")

    @property
    def radius(self) -> int:
        return int(math.ceil(3.0 * self.sigma))


@dataclass
class HeatMap:
    """One day's intensity grid in [0, 255]. ``smoothed`` marks HM' grids."""

    day: int
    grid: np.ndarray
    smoothed: bool = False

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=np.float64)
        if self.grid.ndim != 2:
            raise ValueError("heatmap grid must be 2-D")
        if (self.grid < 0).any() or (self.grid > MAX_INTENSITY).any():
            raise ValueError("heatmap intensities must lie in [0, 255]")


def _rescale_to_max(grid: np.ndarray) -> np.ndarray:
    peak = grid.max()
    if peak <= 0:
        return np.zeros_like(grid)
    # divide first so the peak cell maps to exactly 255
    return (grid / peak) * MAX_INTENSITY


def count_grid(records: Iterable[IncidentRecord], grid: GridSpec) -> np.ndarray:
    counts = np.zeros((grid.height, grid.width), dtype=np.float64)
    for rec in records:
        r, c = grid.cell(rec.lat, rec.lon)
        counts[r, c] += 1.0
    return counts


def rasterize_day(day: int, records: Iterable[IncidentRecord], grid: GridSpec) -> HeatMap:
    """Count incidents per cell and max-normalise to 255 (blank days stay all-zero)."""
    return HeatMap(day, _rescale_to_max(count_grid(records, grid)))


def make_kernel(spec: GaussianSpec) -> np.ndarray:
    r = spec.radius
    offsets = np.arange(-r, r + 1, dtype=np.float64)
    kernel = np.exp(-(offsets[:, None] ** 2 + offsets[None, :] ** 2) / (2.0 * spec.sigma**2))
    return kernel / kernel.sum()


def convolve_same(grid: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Zero-padded convolution keeping the grid's extent (kernel centred on each cell)."""
    return convolve2d(grid, kernel, mode="same", boundary="fill", fillvalue=0.0)


def smooth(hm: HeatMap, spec: GaussianSpec, rescale: bool = True) -> HeatMap:
    """Convolve with the truncated Gaussian, then (by default) rescale the peak to 255."""
    out = convolve_same(hm.grid, make_kernel(spec))
    out = np.maximum(out, 0.0)
    if rescale:
        out = _rescale_to_max(out)
    return HeatMap(hm.day, out, smoothed=True)


def build_heatmaps(
    days: Sequence[Sequence[IncidentRecord]], grid: GridSpec, spec: GaussianSpec
) -> list[HeatMap]:
    """Smoothed heatmaps for every day, in day order (index 0 is day 1)."""
    return [smooth(rasterize_day(d + 1, recs, grid), spec) for d, recs in enumerate(days)]


# -- PGM / PNG --------------------------------------------------------------

def export_pgm(hm: HeatMap) -> bytes:
    """Binary P5 PGM, maxval 255, cells rounded half-to-even to the nearest byte."""
    h, w = hm.grid.shape
    pixels = np.clip(np.rint(hm.grid), 0, 255).astype(np.uint8)
    header = f"P5\n# day {hm.day}\n{w} {h}\n255\n".encode("ascii")
    return header + pixels.tobytes()


_TOKEN = re.compile(rb"(#[^\n]*\n)|(\S+)")


def import_pgm(blob: bytes) -> HeatMap:
    """Parse a P5 PGM (maxval 255). A ``# day N`` comment restores the day index."""
    tokens: list[bytes] = []
    day = 0
    pos = 0
    while len(tokens) < 4:
        m = _TOKEN.search(blob, pos)
        if m is None:
            raise ValueError("truncated PGM header")
        if m.group(1):
            comment = m.group(1)[1:].strip().split()
            if len(comment) == 2 and comment[0] == b"day":
                day = int(comment[1])
        else:
            tokens.append(m.group(2))
        pos = m.end()
    magic, w, h, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if magic != b"P5":
        raise ValueError("only binary P5 PGM is supported")
    if maxval != 255:
        raise ValueError("only maxval 255 is supported")
    data = blob[pos + 1 : pos + 1 + w * h]
    if len(data) != w * h:
        raise ValueError("truncated PGM pixel data")
    grid = np.frombuffer(data, dtype=np.uint8).reshape(h, w).astype(np.float64)
    return HeatMap(day, grid, smoothed=True)


def export_png(hm: HeatMap, path: str | Path) -> None:
    """8-bit grayscale PNG for viewing; no round-trip guarantee."""
    from PIL import Image

    pixels = np.clip(np.rint(hm.grid), 0, 255).astype(np.uint8)
    Image.fromarray(pixels).save(path)
