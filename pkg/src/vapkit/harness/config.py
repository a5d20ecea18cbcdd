"""YAML run configuration: one section per settings object."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

import yaml

from vapkit.errors import ValidationError
from vapkit.events import EventConfig
from vapkit.harness.synth import SynthDialogSpec
from vapkit.model.config import ModelConfig, TrainConfig
from vapkit.zeroshot import AggregationConfig

SECTIONS = ("model", "train", "aggregation", "synth", "events")


def _build(cls, raw: Any, section: str):
    if raw is None:
        return cls()
    if not isinstance(raw, Mapping):
        raise ValidationError(f"config section '{section}' must be a mapping")
    if hasattr(cls, "from_dict"):
        return cls.from_dict(dict(raw))
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - names)
    if unknown:
        raise ValidationError(f"unknown {section} field(s): {', '.join(unknown)}")
    return cls(**raw)


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    aggregation: AggregationConfig = field(default_factory=AggregationConfig)
    synth: SynthDialogSpec = field(default_factory=SynthDialogSpec)
    events: EventConfig = field(default_factory=EventConfig)

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any] | None) -> "RunConfig":
        raw = raw or {}
        if not isinstance(raw, Mapping):
            raise ValidationError("config file must hold a mapping of sections")
        unknown = sorted(set(raw) - set(SECTIONS))
        if unknown:
            raise ValidationError(f"unknown config section(s): {', '.join(unknown)}; expected {SECTIONS}")
        try:
            return cls(
                _build(ModelConfig, raw.get("model"), "model"),
                _build(TrainConfig, raw.get("train"), "train"),
                _build(AggregationConfig, raw.get("aggregation"), "aggregation"),
                _build(SynthDialogSpec, raw.get("synth"), "synth"),
                _build(EventConfig, raw.get("events"), "events"),
            )
        except TypeError as exc:
            raise ValidationError(f"bad config value: {exc}") from None

    def to_dict(self) -> dict[str, Any]:
        def plain(obj):
            d = obj.to_dict() if hasattr(obj, "to_dict") else asdict(obj)
            return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

        return {name: plain(getattr(self, name)) for name in SECTIONS}

    def with_overrides(self, seed: int | None = None, frame_rate: int | None = None) -> "RunConfig":
        """Apply the global command-line flags to every section they concern."""
        d = self.to_dict()
        if frame_rate is not None:
            d["model"]["frame_rate"] = frame_rate
            d["synth"]["frame_rate"] = frame_rate
        if seed is not None:
            d["train"]["seed"] = seed
            d["synth"]["seed"] = seed
        return RunConfig.from_dict(d)


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ValidationError(f"{path}: invalid YAML ({exc})") from None
    return RunConfig.from_dict(raw)
