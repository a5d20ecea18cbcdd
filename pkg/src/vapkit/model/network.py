"""Causal transformer predictor with per-head linear distance biases on attention scores."""

from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from vapkit.errors import NumericalError, ValidationError
from vapkit.model.config import Frontend, ModelConfig
from vapkit.model.features import FeatureArrays
from vapkit.va import N_CLASSES

IGNORE_INDEX = -100


def alibi_slopes(heads: int) -> torch.Tensor:
    """Geometric slopes ``2^(-8k/heads)`` for ``k = 1..heads``."""
    return torch.tensor([2.0 ** (-8.0 * k / heads) for k in range(1, heads + 1)])


def causal_bias(n: int, slopes: torch.Tensor) -> torch.Tensor:
    """``(heads, n, n)`` additive bias: ``-slope * (i - j)`` for ``j <= i``, ``-inf`` above."""
    pos = torch.arange(n, device=slopes.device)
    dist = (pos[:, None] - pos[None, :]).to(slopes.dtype)
    bias = -slopes[:, None, None] * dist
    return bias.masked_fill(dist < 0, float("-inf"))


class CausalSelfAttention(nn.Module):
    def __init__(self, dim: int, heads: int, dropout: float):
        super().__init__()
        self.heads = heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.out = nn.Linear(dim, dim)
        self.drop = nn.Dropout(dropout)
        self.register_buffer("slopes", alibi_slopes(heads), persistent=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        B, T, D = x.shape
        q, k, v = self.qkv(x).view(B, T, 3, self.heads, D // self.heads).permute(2, 0, 3, 1, 4)
        scores = q @ k.transpose(-2, -1) / math.sqrt(D // self.heads)
        scores = scores + causal_bias(T, self.slopes.to(scores.dtype))
        attn = self.drop(torch.softmax(scores, dim=-1))
        return self.out((attn @ v).transpose(1, 2).reshape(B, T, D))


class Block(nn.Module):
    def __init__(self, dim: int, heads: int, dropout: float):
        super().__init__()
        self.ln1 = nn.LayerNorm(dim)
        self.attn = CausalSelfAttention(dim, heads, dropout)
        self.ln2 = nn.LayerNorm(dim)
        self.ff = nn.Sequential(nn.Linear(dim, 4 * dim), nn.GELU(), nn.Linear(4 * dim, dim))
        self.drop = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.drop(self.attn(self.ln1(x)))
        return x + self.drop(self.ff(self.ln2(x)))


def speech_input_dim(config: ModelConfig) -> int:
    if config.frontend is Frontend.VA_ONLY:
        return 2 * len(config.cue_channels)
    if config.frontend is Frontend.LOG_MEL:
        return config.n_mels
    return config.embedding_dim


class VapModel(nn.Module):
    """Frontend projections, causal transformer stack and 256-way projection head."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        d = config.dim
        n_in = speech_input_dim(config)
        self.speech_in = nn.Linear(n_in, d) if n_in else None
        # 100 Hz features reach the model rate through one strided convolution
        self.downsample = (
            nn.Conv1d(d, d, kernel_size=config.stride, stride=config.stride)
            if config.frontend is not Frontend.VA_ONLY and config.stride > 1
            else None
        )
        self.vf_proj = nn.Linear(2, d)
        self.vh_proj = nn.Linear(5, d)
        self.in_drop = nn.Dropout(config.dropout)
        self.blocks = nn.ModuleList(Block(d, config.heads, config.dropout) for _ in range(config.layers))
        self.norm = nn.LayerNorm(d)
        self.head = nn.Linear(d, N_CLASSES)

    def speech_features(self, speech: torch.Tensor | None, n_frames: int) -> torch.Tensor | None:
        if self.speech_in is None:
            return None
        if speech is None:
            raise ValidationError(f"{self.config.frontend.value} frontend expects speech features")
        h = self.speech_in(speech)
        if self.downsample is not None:
            h = self.downsample(h.transpose(1, 2)).transpose(1, 2)
        if h.shape[1] != n_frames:
            raise ValidationError(f"speech features give {h.shape[1]} frames, VA gives {n_frames}")
        return h

    def embed(self, vf: torch.Tensor, vh: torch.Tensor, speech: torch.Tensor | None = None) -> torch.Tensor:
        """``h_t = h_speech + proj(v_f) + proj(v_h)``, shape ``(B, T, dim)``."""
        if vf.ndim != 3 or vf.shape[-1] != 2 or vh.shape[:-1] != vf.shape[:-1] or vh.shape[-1] != 5:
            raise ValidationError(f"expected vf (B, T, 2) and vh (B, T, 5), got {tuple(vf.shape)} and {tuple(vh.shape)}")
        h = self.vf_proj(vf) + self.vh_proj(vh)
        hs = self.speech_features(speech, vf.shape[1])
        return h if hs is None else h + hs

    def forward(self, vf: torch.Tensor, vh: torch.Tensor, speech: torch.Tensor | None = None) -> torch.Tensor:
        if vf.shape[1] > self.config.segment_frames:
            raise ValidationError(
                f"sequence of {vf.shape[1]} frames exceeds the {self.config.segment_frames}-frame context"
            )
        x = self.in_drop(self.embed(vf, vh, speech))
        _check_finite(x, "frontend")
        for i, block in enumerate(self.blocks):
            x = block(x)
            _check_finite(x, f"layer {i}")
        return self.head(self.norm(x))


def _check_finite(x: torch.Tensor, where: str) -> None:
    if not torch.isfinite(x).all():
        raise NumericalError(where)


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def vap_loss(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean cross-entropy over labelled frames; ``-100`` frames are ignored."""
    labels = labels.long()
    bad = (labels != IGNORE_INDEX) & ((labels < 0) | (labels >= N_CLASSES))
    if bad.any():
        raise ValidationError(f"label {int(labels[bad][0])} outside 0..{N_CLASSES - 1}")
    flat_logits = logits.reshape(-1, N_CLASSES)
    flat_labels = labels.reshape(-1)
    if not (flat_labels != IGNORE_INDEX).any():
        return flat_logits.sum() * 0.0
    return F.cross_entropy(flat_logits, flat_labels, ignore_index=IGNORE_INDEX)


def _to_tensor(x: np.ndarray | None) -> torch.Tensor | None:
    return None if x is None else torch.from_numpy(np.ascontiguousarray(x, dtype=np.float32))[None]


@torch.no_grad()
def infer_logits(model: VapModel, feats: FeatureArrays) -> np.ndarray:
    """Logits for a whole dialog, ``(T, 256)``.

    Dialogs longer than the context are processed in the training segmentation:
    windows of ``segment_frames`` overlapping by ``overlap_frames``, each window
    contributing the frames the previous one did not cover.
    """
    cfg = model.config
    was_training = model.training
    model.eval()
    T = feats.n_frames
    L, O = cfg.segment_frames, cfg.overlap_frames
    k = 1 if feats.speech is None or cfg.frontend is Frontend.VA_ONLY else cfg.stride
    out = np.zeros((T, N_CLASSES), dtype=np.float32)
    try:
        for s in segment_starts(T, L, O):
            e = min(s + L, T)
            speech = None if feats.speech is None else feats.speech[s * k : e * k]
            logits = model(_to_tensor(feats.vf[s:e]), _to_tensor(feats.vh[s:e]), _to_tensor(speech))[0]
            keep = 0 if s == 0 else O
            out[s + keep : e] = logits[keep:].numpy()
    finally:
        model.train(was_training)
    return out


def segment_starts(n_frames: int, length: int, overlap: int) -> list[int]:
    """Window starts covering ``n_frames`` with windows of ``length`` overlapping by ``overlap``."""
    step = length - overlap
    starts = [0]
    while starts[-1] + length < n_frames:
        starts.append(starts[-1] + step)
    return starts
