"""Test-split MSE/MAE on a common [0, 1] basis and the comparison report."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dataset import ScalingMode, SequenceSample, stack_batch, unscale_values
from .models import DISPLAY_NAMES, Forecaster

# Reported test-split magnitudes; printed as context only, never used as targets.
PAPER_REFERENCE = {
    "cincinnati": {
        "ConvLSTM": (0.0628, 0.0083),
        "Att-ConvLSTM": (0.04256, 0.0062),
        "TD-Conv-Enc-Dec": (0.0562, 0.0075),
        "Adversarial Att-ConvLSTM": (0.03371, 0.0057),
    },
    "connecticut": {
        "ConvLSTM": (0.0583, 0.0081),
        "Att-ConvLSTM": (0.0415, 0.0067),
        "TD-Conv-Enc-Dec": (0.0517, 0.0073),
        "Adversarial Att-ConvLSTM": (0.0309, 0.0052),
    },
}


def to_unit_basis(values: np.ndarray, mode: ScalingMode) -> np.ndarray:
    """Clamp to the mode's range and map to [0, 1]."""
    return unscale_values(values, mode) / 255.0


def metrics_from_predictions(pred: np.ndarray, truth: np.ndarray) -> tuple[float, float]:
    """Per-sample pixel means, then the mean over samples. Inputs are ``[B, ...]``."""
    if pred.shape != truth.shape or pred.shape[0] == 0:
        raise ValueError("predictions and truth must share a non-empty batch shape")
    diff = (pred - truth).reshape(pred.shape[0], -1)
    mse = float(np.mean(np.mean(diff * diff, axis=1)))
    mae = float(np.mean(np.mean(np.abs(diff), axis=1)))
    return mse, mae


def predict_samples(model: Forecaster, samples: Sequence[SequenceSample], batch_size: int = 16) -> np.ndarray:
    """Model outputs ``[B, H, W]`` in the model's own scaling."""
    outputs = []
    for start in range(0, len(samples), batch_size):
        inputs, _ = stack_batch(samples[start : start + batch_size])
        outputs.append(model.predict(inputs)[:, 0])
    return np.concatenate(outputs)


def evaluate(model: Forecaster, samples: Sequence[SequenceSample], mode: ScalingMode) -> tuple[float, float]:
    """(MSE, MAE) on the [0, 1] basis. ``samples`` are scaled with ``mode``, the model's own scaling."""
    if not samples:
        raise ValueError("empty test split")
    if mode is not model.mode:
        raise ValueError(f"samples are {mode.value}-scaled but the model expects {model.mode.value}")
    pred = to_unit_basis(predict_samples(model, samples), mode)
    truth = to_unit_basis(np.stack([x.label for x in samples]), mode)
    return metrics_from_predictions(pred, truth)


def blank_metrics(samples: Sequence[SequenceSample], mode: ScalingMode) -> tuple[float, float]:
    """Metrics of the all-zero-intensity predictor."""
    if not samples:
        raise ValueError("empty test split")
    truth = to_unit_basis(np.stack([x.label for x in samples]), mode)
    return metrics_from_predictions(np.zeros_like(truth), truth)


@dataclass
class ReportRow:
    method: str
    mse: float
    mae: float


@dataclass
class MetricsReport:
    rows: list[ReportRow]
    dataset: str = ""
    split: str = ""
    seed: int | None = None
    reference: dict[str, tuple[float, float]] = field(default_factory=dict)

    def __post_init__(self):
        for r in self.rows:
            if r.mse < 0 or r.mae < 0:
                raise ValueError(f"negative metric in row {r}")
            # Jensen: mean|e| <= sqrt(mean e^2); slack covers rounding only
            if r.mae > math.sqrt(r.mse) * (1 + 1e-12) + 1e-15:
                raise ValueError(f"MAE exceeds sqrt(MSE) in row {r}")

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["method", "mse", "mae"])
        for r in self.rows:
            writer.writerow([r.method, f"{r.mse:.10g}", f"{r.mae:.10g}"])
        return buf.getvalue()

    def to_text(self) -> str:
        width = max([len("Method")] + [len(r.method) for r in self.rows])
        lines = []
        title = "Evaluation on " + (self.dataset or "dataset")
        if self.split:
            title += f" ({self.split})"
        if self.seed is not None:
            title += f", seed {self.seed}"
        lines.append(title)
        lines.append(f"{'Method':<{width}}  {'MSE':>12}  {'MAE':>12}")
        lines.append("-" * (width + 28))
        for r in self.rows:
            lines.append(f"{r.method:<{width}}  {r.mse:>12.6f}  {r.mae:>12.6f}")
        if self.reference:
            lines.append("")
            lines.append("Published magnitudes (annotation only, not reproduction targets; basis unstated):")
            for name, (mse, mae) in self.reference.items():
                lines.append(f"  {name:<{width}}  {mse:>12.5f}  {mae:>12.5f}")
        return "\n".join(lines) + "\n"


def compare(
    models: Sequence[Forecaster],
    samples_by_mode: dict[ScalingMode, Sequence[SequenceSample]],
    dataset: str = "",
    split: str = "",
    seed: int | None = None,
    include_blank: bool = False,
) -> MetricsReport:
    """One row per model; each model is scored on the samples matching its scaling."""
    rows = []
    for model in models:
        mse, mae = evaluate(model, samples_by_mode[model.mode], model.mode)
        rows.append(ReportRow(DISPLAY_NAMES.get(model.kind, model.kind), mse, mae))
    if include_blank:
        mode, samples = next(iter(samples_by_mode.items()))
        mse, mae = blank_metrics(samples, mode)
        rows.append(ReportRow("Blank (all-zero)", mse, mae))
    return MetricsReport(rows, dataset, split, seed, PAPER_REFERENCE.get(dataset.lower(), {}))
