"""Self-describing checkpoint files (named tensors plus a JSON config header)."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import torch
from safetensors import SafetensorError, safe_open
from safetensors.torch import load_file, save_file

from vapkit.errors import ValidationError
from vapkit.model.config import ModelConfig
from vapkit.model.network import VapModel

FORMAT = "vapkit-checkpoint/1"


@dataclass
class Checkpoint:
    config: ModelConfig
    state: dict[str, torch.Tensor]
    meta: dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_model(cls, model: VapModel, **meta: Any) -> "Checkpoint":
        state = {k: v.detach().clone().contiguous() for k, v in model.state_dict().items()}
        return cls(model.config, state, dict(meta))

    def build(self) -> VapModel:
        """Instantiate the network in eval mode; shapes must match the config exactly."""
        model = VapModel(self.config)
        try:
            model.load_state_dict(self.state, strict=True)
        except RuntimeError as exc:
            raise ValidationError(f"checkpoint tensors do not match its config: {exc}") from None
        return model.eval()


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    header = {
        "format": FORMAT,
        "config": json.dumps(ckpt.config.to_dict(), sort_keys=True),
        "training": json.dumps(ckpt.meta, sort_keys=True, default=str),
    }
    save_file(ckpt.state, str(path), metadata=header)


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"checkpoint not found: {path}")
    try:
        state = load_file(str(path))
        with safe_open(str(path), framework="pt") as fh:
            meta = fh.metadata() or {}
    except (SafetensorError, OSError, ValueError) as exc:
        raise ValidationError(f"{path}: not a readable checkpoint ({exc})") from None
    if meta.get("format") != FORMAT:
        raise ValidationError(f"{path}: unsupported checkpoint format {meta.get('format')!r}")
    ckpt = Checkpoint(ModelConfig.from_dict(json.loads(meta["config"])), state, json.loads(meta.get("training", "{}")))
    ckpt.build()  # shape validation
    return ckpt


def checkpoint_id(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:12]
