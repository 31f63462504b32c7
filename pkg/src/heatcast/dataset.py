"""Sliding windows of smoothed heatmaps, chronological splits, scaling and the cache file."""

from __future__ import annotations

import enum
import io
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .raster import HeatMap

MIN_WINDOW, MAX_WINDOW = 2, 8


class DatasetError(ValueError):
    pass


class ScalingMode(enum.Enum):
    UNIT = "unit"  # [0, 255] -> [0, 1]
    SYMMETRIC = "symmetric"  # [0, 255] -> [-1, 1]

    @property
    def bounds(self) -> tuple[float, float]:
        return (0.0, 1.0) if self is ScalingMode.UNIT else (-1.0, 1.0)


def scale_values(values: np.ndarray, mode: ScalingMode) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if mode is ScalingMode.UNIT:
        return values / 255.0
    return (values - 127.5) / 127.5


def unscale_values(values: np.ndarray, mode: ScalingMode) -> np.ndarray:
    """Back to [0, 255] intensities, clamping to the mode's range first."""
    lo, hi = mode.bounds
    values = np.clip(np.asarray(values, dtype=np.float64), lo, hi)
    if mode is ScalingMode.UNIT:
        return values * 255.0
    return values * 127.5 + 127.5


@dataclass
class SequenceSample:
    """``n`` consecutive days starting at day ``t`` plus the following day as label."""

    t: int
    inputs: np.ndarray  # [n, H, W]
    label: np.ndarray  # [H, W]

    @property
    def n(self) -> int:
        return self.inputs.shape[0]


@dataclass(frozen=True)
class SplitConfig:
    n: int = 6
    s: int | None = None

    def resolve(self, num_days: int) -> int:
        """Validate against the number of heatmaps and return the concrete ``s``."""
        if not MIN_WINDOW <= self.n <= MAX_WINDOW:
            raise DatasetError(f"window length n={self.n} outside [{MIN_WINDOW}, {MAX_WINDOW}]")
        s = default_split(num_days, self.n) if self.s is None else self.s
        upper = num_days - self.n - 1
        if not 1 <= s <= upper:
            raise DatasetError(f"split s={s} outside [1, {upper}] for {num_days} days and n={self.n}")
        return s


def default_split(num_days: int, n: int) -> int:
    """80/20 chronological split over the window start indices."""
    return int(math.floor(0.8 * (num_days - n)))


def make_windows(heatmaps: Sequence[HeatMap] | Sequence[np.ndarray], n: int) -> list[SequenceSample]:
    """All windows ``t = 1 .. len(heatmaps) - n`` in order (blank days included)."""
    grids = [hm.grid if isinstance(hm, HeatMap) else np.asarray(hm, dtype=np.float64) for hm in heatmaps]
    if len(grids) <= n:
        raise DatasetError(f"need at least n+1={n + 1} heatmaps for windows of length {n}, got {len(grids)}")
    volume = np.stack(grids)
    return [
        SequenceSample(t=t, inputs=volume[t - 1 : t - 1 + n].copy(), label=volume[t - 1 + n].copy())
        for t in range(1, len(grids) - n + 1)
    ]


def split(samples: Sequence[SequenceSample], s: int) -> tuple[list[SequenceSample], list[SequenceSample]]:
    """Chronological split: ``t <= s`` trains, ``t >= s + 1`` tests."""
    if not 1 <= s <= len(samples) - 1:
        raise DatasetError(f"split s={s} outside [1, {len(samples) - 1}]")
    train = [x for x in samples if x.t <= s]
    test = [x for x in samples if x.t > s]
    return train, test


def scale(sample: SequenceSample, mode: ScalingMode) -> SequenceSample:
    return SequenceSample(sample.t, scale_values(sample.inputs, mode), scale_values(sample.label, mode))


def unscale(pred: np.ndarray, mode: ScalingMode) -> np.ndarray:
    return unscale_values(pred, mode)


def rescale(samples: Sequence[SequenceSample], source: ScalingMode, target: ScalingMode) -> list[SequenceSample]:
    if source is target:
        return list(samples)
    return [
        SequenceSample(
            x.t,
            scale_values(unscale_values(x.inputs, source), target),
            scale_values(unscale_values(x.label, source), target),
        )
        for x in samples
    ]


def stack_batch(samples: Sequence[SequenceSample]) -> tuple[np.ndarray, np.ndarray]:
    """Model-ready arrays: inputs ``[B, n, 1, H, W]`` and labels ``[B, 1, H, W]``."""
    inputs = np.stack([x.inputs for x in samples])[:, :, None]
    labels = np.stack([x.label for x in samples])[:, None]
    return inputs, labels


def iterate_batches(
    samples: Sequence[SequenceSample], batch_size: int, rng: np.random.Generator
) -> Iterator[list[SequenceSample]]:
    """One epoch of shuffled batches; the trailing short batch is kept."""
    order = rng.permutation(len(samples))
    for start in range(0, len(order), batch_size):
        yield [samples[i] for i in order[start : start + batch_size]]


# -- cache file ---------------------------------------------------------------

CACHE_MAGIC = b"HGD1"
_HEADER = struct.Struct("<4sIIIIIB")  # magic, n, H, W, count, s, mode
_MODES = {ScalingMode.UNIT: 0, ScalingMode.SYMMETRIC: 1}


@dataclass
class SampleSet:
    """A cached dataset: all windows, their scaling, and the split index."""

    samples: list[SequenceSample]
    mode: ScalingMode
    s: int

    @property
    def n(self) -> int:
        return self.samples[0].n

    def train_test(self) -> tuple[list[SequenceSample], list[SequenceSample]]:
        return split(self.samples, self.s)

    def as_mode(self, mode: ScalingMode) -> "SampleSet":
        return SampleSet(rescale(self.samples, self.mode, mode), mode, self.s)


def dump_cache(dataset: SampleSet) -> bytes:
    if not dataset.samples:
        raise DatasetError("cannot cache an empty sample set")
    n, h, w = dataset.samples[0].inputs.shape
    buf = io.BytesIO()
    buf.write(_HEADER.pack(CACHE_MAGIC, n, h, w, len(dataset.samples), dataset.s, _MODES[dataset.mode]))
    for x in dataset.samples:
        buf.write(struct.pack("<q", x.t))
        buf.write(np.ascontiguousarray(x.inputs, dtype="<f8").tobytes())
        buf.write(np.ascontiguousarray(x.label, dtype="<f8").tobytes())
    return buf.getvalue()


def load_cache(blob: bytes) -> SampleSet:
    if len(blob) < _HEADER.size:
        raise DatasetError("truncated dataset cache")
    magic, n, h, w, count, s, mode_code = _HEADER.unpack_from(blob, 0)
    if magic != CACHE_MAGIC:
        raise DatasetError("not a dataset cache (bad magic)")
    mode = {v: k for k, v in _MODES.items()}[mode_code]
    per = 8 + 8 * (n * h * w + h * w)
    if len(blob) != _HEADER.size + count * per:
        raise DatasetError("dataset cache size does not match its header")
    samples = []
    pos = _HEADER.size
    for _ in range(count):
        (t,) = struct.unpack_from("<q", blob, pos)
        values = np.frombuffer(blob, dtype="<f8", count=n * h * w + h * w, offset=pos + 8).astype(np.float64)
        samples.append(SequenceSample(t, values[: n * h * w].reshape(n, h, w), values[n * h * w :].reshape(h, w)))
        pos += per
    return SampleSet(samples, mode, s)


def save_cache(path: str | Path, dataset: SampleSet) -> None:
    Path(path).write_bytes(dump_cache(dataset))


def read_cache(path: str | Path) -> SampleSet:
    return load_cache(Path(path).read_bytes())
