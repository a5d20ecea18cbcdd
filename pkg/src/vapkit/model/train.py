"""Segmenting, batching and the early-stopped training loop."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import torch

from vapkit.errors import NumericalError, TrainingDiverged, ValidationError
from vapkit.model.checkpoint import Checkpoint
from vapkit.model.config import Frontend, ModelConfig, TrainConfig
from vapkit.model.features import FeatureArrays
from vapkit.model.network import IGNORE_INDEX, VapModel, segment_starts, vap_loss

log = logging.getLogger(__name__)


@dataclass
class Segment:
    vf: np.ndarray
    vh: np.ndarray
    speech: np.ndarray | None
    labels: np.ndarray
    source: str = ""
    start: int = 0


def segment_dialog(feats: FeatureArrays, config: ModelConfig, source: str = "") -> list[Segment]:
    """Cut a dialog into context-sized windows.

    Windows overlap by ``overlap_frames``; in every window after the first those
    overlapping frames still feed the model but carry no loss, so each frame is
    scored once.
    """
    T = feats.n_frames
    L, O = config.segment_frames, config.overlap_frames
    k = config.stride if config.frontend is not Frontend.VA_ONLY else 1
    out = []
    for s in segment_starts(T, L, O):
        e = min(s + L, T)
        labels = feats.labels[s:e].copy()
        if s > 0:
            labels[:O] = IGNORE_INDEX
        speech = None if feats.speech is None else feats.speech[s * k : e * k]
        out.append(Segment(feats.vf[s:e], feats.vh[s:e], speech, labels, source, s))
    return out


def collate(segments: Sequence[Segment], dtype: torch.dtype = torch.float32) -> dict[str, torch.Tensor | None]:
    """Right-pad a batch; padded frames are ignored by the loss and, being later in
    time, cannot influence real frames through causal attention."""
    n = max(len(s.labels) for s in segments)
    B = len(segments)
    vf = np.zeros((B, n, 2), np.float32)
    vh = np.zeros((B, n, 5), np.float32)
    labels = np.full((B, n), IGNORE_INDEX, np.int64)
    speech = None
    if segments[0].speech is not None:
        k = len(segments[0].speech) // max(1, len(segments[0].labels))
        speech = np.zeros((B, n * k, segments[0].speech.shape[1]), np.float32)
    for i, s in enumerate(segments):
        t = len(s.labels)
        vf[i, :t], vh[i, :t], labels[i, :t] = s.vf, s.vh, s.labels
        if speech is not None:
            speech[i, : len(s.speech)] = s.speech
    return {
        "vf": torch.from_numpy(vf).to(dtype),
        "vh": torch.from_numpy(vh).to(dtype),
        "speech": None if speech is None else torch.from_numpy(speech).to(dtype),
        "labels": torch.from_numpy(labels),
    }


def split_dataset(items: Sequence, val_fraction: float = 0.1, seed: int = 0) -> tuple[list, list]:
    """Shuffled train/validation split with at least one item on each side."""
    if len(items) < 2:
        raise ValidationError(f"need at least 2 dialogs to split, got {len(items)}")
    order = np.random.default_rng(seed).permutation(len(items))
    n_val = min(len(items) - 1, max(1, int(round(val_fraction * len(items)))))
    return [items[i] for i in order[n_val:]], [items[i] for i in order[:n_val]]


class EarlyStopping:
    """Tracks the best validation loss; signals a stop after ``patience`` epochs
    without strict improvement."""

    def __init__(self, patience: int = 10):
        self.patience = patience
        self.best = math.inf
        self.best_epoch: int | None = None
        self.bad_epochs = 0

    def update(self, epoch: int, loss: float) -> bool:
        """Record an epoch; returns True when training should stop."""
        if loss < self.best:
            self.best, self.best_epoch, self.bad_epochs = loss, epoch, 0
            return False
        self.bad_epochs += 1
        return self.bad_epochs >= self.patience

    @property
    def improved_last(self) -> bool:
        return self.bad_epochs == 0 and self.best_epoch is not None


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    seconds: float


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    stopped_epoch: int = 0
    stop_reason: str = ""


def _segments(items: Sequence[FeatureArrays], config: ModelConfig) -> list[Segment]:
    segs = [seg for i, f in enumerate(items) for seg in segment_dialog(f, config, str(i))]
    return [s for s in segs if (s.labels != IGNORE_INDEX).any()]


@torch.no_grad()
def evaluate_loss(model: VapModel, segments: Sequence[Segment], batch_size: int = 16) -> float:
    """Frame-weighted mean loss over ``segments`` (eval mode)."""
    was = model.training
    model.eval()
    total, frames = 0.0, 0
    dtype = next(model.parameters()).dtype
    for i in range(0, len(segments), batch_size):
        b = collate(segments[i : i + batch_size], dtype)
        n = int((b["labels"] != IGNORE_INDEX).sum())
        if n:
            total += float(vap_loss(model(b["vf"], b["vh"], b["speech"]), b["labels"])) * n
            frames += n
    model.train(was)
    return total / frames if frames else math.nan


def train(
    train_set: Sequence[FeatureArrays],
    val_set: Sequence[FeatureArrays],
    config: ModelConfig,
    settings: TrainConfig = TrainConfig(),
    val_loss_fn: Callable[[VapModel, int], float] | None = None,
    on_epoch: Callable[[EpochRecord], None] | None = None,
) -> TrainResult:
    """AdamW training with early stopping on validation loss.

    Returns the checkpoint of the best validation epoch. ``val_loss_fn(model, epoch)``
    replaces the built-in validation loss when given. A non-finite training loss aborts
    with :class:`TrainingDiverged` carrying the best checkpoint so far.
    """
    if not train_set:
        raise ValidationError("training set is empty")
    if not val_set and val_loss_fn is None:
        raise ValidationError("validation set is empty")
    torch.manual_seed(settings.seed)
    rng = np.random.default_rng(settings.seed)
    model = VapModel(config)
    opt = torch.optim.AdamW(model.parameters(), lr=settings.lr, weight_decay=settings.weight_decay)
    train_segs = _segments(train_set, config)
    val_segs = _segments(val_set, config)
    if not train_segs:
        raise ValidationError("training set has no labelled frames")
    sched = None
    if settings.lr_schedule == "one_cycle":
        per_epoch = -(-len(train_segs) // settings.batch_size)
        sched = torch.optim.lr_scheduler.OneCycleLR(opt, settings.lr, total_steps=per_epoch * settings.max_epochs)
    stopper = EarlyStopping(settings.patience)
    best = Checkpoint.from_model(model, epoch=0, val_loss=None)
    history: list[EpochRecord] = []
    t_start = time.perf_counter()
    reason = "max_epochs"
    epoch = 0
    for epoch in range(1, settings.max_epochs + 1):
        t0 = time.perf_counter()
        model.train()
        order = rng.permutation(len(train_segs))
        total, frames = 0.0, 0
        for i in range(0, len(order), settings.batch_size):
            b = collate([train_segs[j] for j in order[i : i + settings.batch_size]])
            try:
                loss = vap_loss(model(b["vf"], b["vh"], b["speech"]), b["labels"])
            except NumericalError:
                loss = torch.tensor(math.nan)
            if not torch.isfinite(loss):
                log.error("non-finite training loss in epoch %d; keeping epoch %s weights", epoch, best.meta["epoch"])
                raise TrainingDiverged(epoch, best)
            opt.zero_grad()
            loss.backward()
            opt.step()
            if sched is not None:
                sched.step()
            n = int((b["labels"] != IGNORE_INDEX).sum())
            total += loss.item() * n
            frames += n
        train_loss = total / frames if frames else math.nan
        val_loss = val_loss_fn(model, epoch) if val_loss_fn else evaluate_loss(model, val_segs, settings.batch_size)
        rec = EpochRecord(epoch, train_loss, float(val_loss), time.perf_counter() - t0)
        history.append(rec)
        log.info("epoch %d train %.4f val %.4f (%.1fs)", epoch, train_loss, val_loss, rec.seconds)
        if on_epoch:
            on_epoch(rec)
        stop = stopper.update(epoch, float(val_loss))
        if stopper.improved_last:
            best = Checkpoint.from_model(model, epoch=epoch, val_loss=float(val_loss), train_loss=train_loss)
        if stop:
            reason = "early_stopping"
            break
        if settings.max_seconds is not None and time.perf_counter() - t_start >= settings.max_seconds:
            reason = "time_budget"
            break
    best.meta.update(
        stopped_epoch=epoch,
        stop_reason=reason,
        train_settings=settings.to_dict(),
        history=[vars(h) for h in history],
    )
    return TrainResult(best, history, stopper.best_epoch or 0, epoch, reason)
