"""Model and optimizer configuration."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from enum import Enum
from typing import Any, Mapping

from vapkit.errors import ValidationError
from vapkit.va import FRAME_RATES

FEATURE_RATE = 100  # Hz, rate of log-mel and external embedding inputs


class Frontend(str, Enum):
    VA_ONLY = "va_only"
    LOG_MEL = "log_mel"
    EXTERNAL = "external_embeddings"


@dataclass(frozen=True)
class ModelConfig:
    frame_rate: int = 50
    layers: int = 4
    heads: int = 8
    dim: int = 256
    dropout: float = 0.1
    frontend: Frontend = Frontend.VA_ONLY
    cue_channels: tuple[str, ...] = ()
    n_mels: int = 80
    embedding_dim: int = 256
    sample_rate: int = 16000
    segment_s: float = 10.0
    overlap_s: float = 1.0
    bin_durations: tuple[float, ...] = (0.2, 0.4, 0.6, 0.8)

    def __post_init__(self) -> None:
        object.__setattr__(self, "frontend", Frontend(self.frontend))
        object.__setattr__(self, "cue_channels", tuple(self.cue_channels))
        object.__setattr__(self, "bin_durations", tuple(float(b) for b in self.bin_durations))
        if self.frame_rate not in FRAME_RATES:
            raise ValidationError(f"frame_rate must be one of {FRAME_RATES}, got {self.frame_rate}")
        if self.layers < 1 or self.heads < 1 or self.dim < 1:
            raise ValidationError("layers, heads and dim must be positive")
        if self.dim % self.heads:
            raise ValidationError(f"dim {self.dim} is not divisible by heads {self.heads}")
        if not 0 <= self.dropout < 1:
            raise ValidationError(f"dropout must be in [0, 1), got {self.dropout}")
        if not 0 <= self.overlap_s < self.segment_s:
            raise ValidationError("segment overlap must be shorter than the segment")
        if self.cue_channels and self.frontend is not Frontend.VA_ONLY:
            raise ValidationError("cue channels are only supported by the va_only frontend")
        if len(set(self.cue_channels)) != len(self.cue_channels):
            raise ValidationError(f"duplicate cue channel in {self.cue_channels}")

    @property
    def stride(self) -> int:
        """Downsampling factor from the 100 Hz feature rate to the model frame rate."""
        return FEATURE_RATE // self.frame_rate

    @property
    def segment_frames(self) -> int:
        return int(round(self.segment_s * self.frame_rate))

    @property
    def overlap_frames(self) -> int:
        return int(round(self.overlap_s * self.frame_rate))

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["frontend"] = self.frontend.value
        d["cue_channels"] = list(self.cue_channels)
        d["bin_durations"] = list(self.bin_durations)
        return d

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "ModelConfig":
        return cls(**_known(cls, raw))


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 3e-4
    weight_decay: float = 1e-2
    batch_size: int = 16
    max_epochs: int = 100
    patience: int = 10
    val_fraction: float = 0.1
    seed: int = 0
    max_seconds: float | None = None  # wall-clock budget; stops after the epoch that crosses it
    lr_schedule: str = "constant"  # or "one_cycle" (warm-up then cosine decay over max_epochs)

    def __post_init__(self) -> None:
        if self.lr_schedule not in ("constant", "one_cycle"):
            raise ValidationError(f"lr_schedule must be 'constant' or 'one_cycle', got {self.lr_schedule!r}")
        if self.lr <= 0 or self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ValidationError("lr, batch_size, max_epochs and patience must be positive")
        if not 0 < self.val_fraction < 1:
            raise ValidationError(f"val_fraction must be in (0, 1), got {self.val_fraction}")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "TrainConfig":
        return cls(**_known(cls, raw))


def _known(cls: type, raw: Mapping[str, Any]) -> dict[str, Any]:
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - names)
    if unknown:
        raise ValidationError(f"unknown {cls.__name__} field(s): {', '.join(unknown)}")
    return dict(raw)
