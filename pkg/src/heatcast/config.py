"""Run configuration: JSON file values overlaid by command-line flags, validated as a whole."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping

from .dataset import MAX_WINDOW, MIN_WINDOW, ScalingMode
from .ingest import BoundingBox, DatasetSchema, load_presets
from .models import MODEL_KINDS, NAMED_ARCHS
from .training import TrainConfig


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("; ".join(problems))

    @property
    def fields(self) -> list[str]:
        return [p.split(":", 1)[0] for p in self.problems]


@dataclass
class RunConfig:
    schema: str = "cincinnati"
    schema_overrides: dict = field(default_factory=dict)
    bbox: dict | None = None
    height: int = 64
    width: int = 64
    sigma: float = 1.5
    n: int = 6
    s: int | None = None
    scaling: str = "unit"
    model: str = "gan"
    arch: str = "paper"
    seed: int = 0
    checkpoint_every: int = 0
    train: TrainConfig = field(default_factory=TrainConfig)

    def validate(self) -> list[str]:
        problems = []
        presets = load_presets()
        if self.schema not in presets["schemas"]:
            problems.append(f"schema: unknown preset {self.schema!r}")
        else:
            try:
                self.dataset_schema()
            except (TypeError, ValueError, KeyError) as exc:
                problems.append(f"schema_overrides: {exc}")
        if self.bbox is not None:
            try:
                BoundingBox(**self.bbox)
            except (TypeError, ValueError) as exc:
                problems.append(f"bbox: {exc}")
        for name in ("height", "width"):
            value = getattr(self, name)
            if not isinstance(value, int) or value <= 0 or value % 4:
                problems.append(f"{name}: must be a positive multiple of 4")
        if not self.sigma > 0:
            problems.append("sigma: must be > 0")
        if not MIN_WINDOW <= self.n <= MAX_WINDOW:
            problems.append(f"n: must lie in [{MIN_WINDOW}, {MAX_WINDOW}]")
        if self.s is not None and self.s < 1:
            problems.append("s: must be >= 1")
        if self.scaling not in {m.value for m in ScalingMode}:
            problems.append("scaling: must be 'unit' or 'symmetric'")
        if self.model not in MODEL_KINDS:
            problems.append(f"model: must be one of {sorted(MODEL_KINDS)}")
        if self.arch not in NAMED_ARCHS:
            problems.append(f"arch: must be one of {sorted(NAMED_ARCHS)}")
        if self.checkpoint_every < 0:
            problems.append("checkpoint_every: must be >= 0")
        problems.extend(f"train.{p}" for p in self.train.validate())
        return problems

    def check(self) -> "RunConfig":
        problems = self.validate()
        if problems:
            raise ConfigError(problems)
        return self

    def dataset_schema(self) -> DatasetSchema:
        raw = dict(load_presets()["schemas"][self.schema], name=self.schema)
        raw.update(self.schema_overrides)
        return DatasetSchema.from_dict(raw)

    def resolved_bbox(self) -> BoundingBox | None:
        if self.bbox is not None:
            return BoundingBox(**self.bbox)
        preset = load_presets().get("bboxes", {}).get(self.schema)
        return BoundingBox(**preset) if preset else None


_TRAIN_FIELDS = {f.name for f in fields(TrainConfig)}
_RUN_FIELDS = {f.name for f in fields(RunConfig)} - {"train"}


def build_config(file_values: Mapping[str, Any] | None = None, flags: Mapping[str, Any] | None = None) -> RunConfig:
    """Defaults, then file values, then non-None flags. Unknown keys are config errors."""
    merged: dict[str, Any] = {}
    train: dict[str, Any] = {}
    problems = []
    for source in (file_values or {}, {k: v for k, v in (flags or {}).items() if v is not None}):
        for key, value in source.items():
            if key == "train" and isinstance(value, Mapping):
                for tk, tv in value.items():
                    if tk in _TRAIN_FIELDS:
                        train[tk] = tv
                    else:
                        problems.append(f"train.{tk}: unknown setting")
            elif key in _TRAIN_FIELDS:
                train[key] = value
            elif key in _RUN_FIELDS:
                merged[key] = value
            else:
                problems.append(f"{key}: unknown setting")
    if problems:
        raise ConfigError(problems)
    cfg = RunConfig(**merged)
    if "seed" in merged and "seed" not in train:
        train["seed"] = merged["seed"]
    try:
        return replace(cfg, train=replace(cfg.train, **train))
    except TypeError as exc:
        raise ConfigError([f"train: {exc}"]) from exc


def load_config_file(path: str | Path | None) -> dict:
    if path is None:
        return {}
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError([f"config: file not found: {path}"]) from exc
    except json.JSONDecodeError as exc:
        raise ConfigError([f"config: invalid JSON ({exc})"]) from exc
    if not isinstance(raw, dict):
        raise ConfigError(["config: top level must be a JSON object"])
    return raw
