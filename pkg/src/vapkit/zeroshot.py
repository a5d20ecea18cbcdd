"""Zero-shot turn-taking probabilities from the 256-class projection distribution,
event-level weighted-F1 evaluation and short-completion-point region analysis."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from vapkit.errors import ValidationError
from vapkit.events import EventSet, GapLabel, Polarity
from vapkit.va import N_CLASSES, SPEAKERS, class_bit_table, speaker_index

SIMPLEX_TOL = 1e-6
METRICS = ("shift_hold", "shift_pred", "bc_pred")

_BITS = class_bit_table()  # (256, speaker, bin)


@dataclass(frozen=True)
class AggregationConfig:
    """Which projection bins (1-indexed) count as evidence for each zero-shot task."""

    shift_bins: tuple[int, ...] = (3, 4)
    bc_active_bins: tuple[int, ...] = (1, 2)
    bc_silent_bins: tuple[int, ...] = (3, 4)
    threshold: float = 0.5

    def __post_init__(self) -> None:
        for name in ("shift_bins", "bc_active_bins", "bc_silent_bins"):
            bins = tuple(int(b) for b in getattr(self, name))
            if not bins or any(b < 1 or b > 4 for b in bins):
                raise ValidationError(f"{name} must be a nonempty subset of 1..4, got {bins}")
            object.__setattr__(self, name, bins)
        if not 0.0 <= self.threshold <= 1.0:
            raise ValidationError(f"threshold must lie in [0, 1], got {self.threshold}")


DEFAULT_AGGREGATION = AggregationConfig()


def _idx(bins: Sequence[int]) -> list[int]:
    return [b - 1 for b in bins]


def next_speaker_masks(config: AggregationConfig = DEFAULT_AGGREGATION) -> np.ndarray:
    """``(2, 256)`` boolean: class gives floor evidence for speaker A / B.

    A class is evidence for speaker ``s`` when ``s`` is active in every shift bin and the
    other speaker in none of them.
    """
    sb = _idx(config.shift_bins)
    a_all = _BITS[:, 0, sb].all(axis=1)
    b_all = _BITS[:, 1, sb].all(axis=1)
    a_none = ~_BITS[:, 0, sb].any(axis=1)
    b_none = ~_BITS[:, 1, sb].any(axis=1)
    return np.stack([a_all & b_none, b_all & a_none])


def bc_masks(config: AggregationConfig = DEFAULT_AGGREGATION) -> np.ndarray:
    """``(2, 256)`` boolean: class is a short, non-turn-claiming future for listener A / B."""
    act, sil = _idx(config.bc_active_bins), _idx(config.bc_silent_bins)
    rows = []
    for s in range(2):
        rows.append(_BITS[:, s, act].any(axis=1) & ~_BITS[:, s, sil].any(axis=1))
    return np.stack(rows)


def _check_dist(dist: np.ndarray) -> np.ndarray:
    d = np.asarray(dist, dtype=np.float64)
    if d.shape[-1] != N_CLASSES:
        raise ValidationError(f"distribution must have {N_CLASSES} entries, got shape {d.shape}")
    if not np.all(np.isfinite(d)) or np.any(d < 0):
        raise ValidationError("distribution has negative or non-finite entries")
    sums = d.sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > SIMPLEX_TOL):
        worst = float(np.max(np.abs(sums - 1.0)))
        raise ValidationError(f"distribution not normalized (max |sum - 1| = {worst:.3g})")
    return d


def _normalized_evidence(evidence: np.ndarray) -> np.ndarray:
    """``(..., 2)`` evidence to probabilities; zero evidence maps to (0.5, 0.5)."""
    total = evidence.sum(axis=-1, keepdims=True)
    out = np.full_like(evidence, 0.5)
    nz = total[..., 0] > 0
    out[nz] = evidence[nz] / total[nz]
    return out


def next_speaker_prob(dist: np.ndarray, config: AggregationConfig = DEFAULT_AGGREGATION) -> tuple[float, float]:
    d = _check_dist(dist)
    if d.ndim != 1:
        raise ValidationError("next_speaker_prob takes a single 256-vector")
    evidence = next_speaker_masks(config).astype(np.float64) @ d
    p = _normalized_evidence(evidence)
    return float(p[0]), float(p[1])


def shift_probability(dist: np.ndarray, prev_speaker: str, config: AggregationConfig = DEFAULT_AGGREGATION) -> float:
    """Probability that the floor goes to the speaker other than ``prev_speaker``."""
    p = next_speaker_prob(dist, config)
    return p[1 - speaker_index(prev_speaker)]


def bc_prediction_prob(dist: np.ndarray, listener: str, config: AggregationConfig = DEFAULT_AGGREGATION) -> float:
    d = _check_dist(dist)
    if d.ndim != 1:
        raise ValidationError("bc_prediction_prob takes a single 256-vector")
    return float(bc_masks(config)[speaker_index(listener)].astype(np.float64) @ d)


@dataclass(frozen=True, eq=False)
class ProbSequence:
    """Per-frame distributions over the 256 projection classes, ``probs[t, class]``."""

    frame_rate: int
    probs: np.ndarray

    def __post_init__(self) -> None:
        p = _check_dist(self.probs)
        if p.ndim != 2:
            raise ValidationError(f"probs must be (T, 256), got {p.shape}")
        p = p.copy()
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @classmethod
    def from_logits(cls, logits: np.ndarray, frame_rate: int) -> "ProbSequence":
        z = np.asarray(logits, dtype=np.float64)
        z = z - z.max(axis=-1, keepdims=True)
        e = np.exp(z)
        return cls(frame_rate, e / e.sum(axis=-1, keepdims=True))

    @property
    def n_frames(self) -> int:
        return int(self.probs.shape[0])

    def next_speaker(self, config: AggregationConfig = DEFAULT_AGGREGATION) -> np.ndarray:
        """``(T, 2)`` per-frame (pA, pB)."""
        evidence = self.probs @ next_speaker_masks(config).T.astype(np.float64)
        return _normalized_evidence(evidence)

    def shift_track(self, prev_speaker: str, config: AggregationConfig = DEFAULT_AGGREGATION) -> np.ndarray:
        return self.next_speaker(config)[:, 1 - speaker_index(prev_speaker)]

    def bc_track(self, listener: str, config: AggregationConfig = DEFAULT_AGGREGATION) -> np.ndarray:
        return self.probs @ bc_masks(config)[speaker_index(listener)].astype(np.float64)


# -- weighted F1 ------------------------------------------------------------------


def _f1(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


@dataclass
class EvalReport:
    """Binary event classification summary. Class ``1`` is Shift / positive."""

    metric: str
    tp: int
    fp: int
    fn: int
    tn: int
    weighted_f1: float = 0.0
    baseline_weighted_f1: float = 0.0
    precision: dict[str, float] = field(default_factory=dict)
    recall: dict[str, float] = field(default_factory=dict)
    f1: dict[str, float] = field(default_factory=dict)
    support: dict[str, int] = field(default_factory=dict)

    @classmethod
    def from_confusion(cls, metric: str, tp: int, fp: int, fn: int, tn: int) -> "EvalReport":
        rep = cls(metric, int(tp), int(fp), int(fn), int(tn))
        names = class_names(metric)
        p1, r1, f1_1 = _f1(tp, fp, fn)
        p0, r0, f1_0 = _f1(tn, fn, fp)
        n1, n0 = tp + fn, tn + fp
        rep.precision = {names[0]: p0, names[1]: p1}
        rep.recall = {names[0]: r0, names[1]: r1}
        rep.f1 = {names[0]: f1_0, names[1]: f1_1}
        rep.support = {names[0]: n0, names[1]: n1}
        rep.weighted_f1 = weighted_f1_from_confusion(tp, fp, fn, tn)
        rep.baseline_weighted_f1 = majority_baseline(n1, n0)
        return rep

    @property
    def n_events(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def merge(self, other: "EvalReport") -> "EvalReport":
        if other.metric != self.metric:
            raise ValidationError(f"cannot merge {self.metric} with {other.metric}")
        return EvalReport.from_confusion(
            self.metric, self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn
        )

    def to_dict(self) -> dict:
        return asdict(self) | {"n_events": self.n_events}


def class_names(metric: str) -> tuple[str, str]:
    return ("hold", "shift") if metric == "shift_hold" else ("negative", "positive")


def weighted_f1_from_confusion(tp: int, fp: int, fn: int, tn: int) -> float:
    """Support-weighted mean of the per-class F1 scores of a binary confusion matrix."""
    n = tp + fp + fn + tn
    if n == 0:
        return 0.0
    f1_pos = _f1(tp, fp, fn)[2]
    f1_neg = _f1(tn, fn, fp)[2]
    return ((tp + fn) * f1_pos + (tn + fp) * f1_neg) / n


def majority_baseline(n_pos: int, n_neg: int) -> float:
    """Weighted F1 of always predicting the more frequent class (ties predict positive)."""
    if n_pos >= n_neg:
        return weighted_f1_from_confusion(n_pos, n_neg, 0, 0)
    return weighted_f1_from_confusion(0, 0, n_pos, n_neg)


def empty_report(metric: str) -> EvalReport:
    return EvalReport.from_confusion(metric, 0, 0, 0, 0)


# -- event scoring -----------------------------------------------------------------


@dataclass(frozen=True)
class EventScore:
    event_id: int
    kind: str
    label: int
    score: float
    decision: int


def _mean_over(track: np.ndarray, start: int, end: int, what: str) -> float:
    if start < 0 or end > len(track) or end <= start:
        raise ValidationError(f"{what}: frames [{start}, {end}) not covered by {len(track)} probability frames")
    return float(track[start:end].mean())


def score_events(
    events: EventSet, probs: ProbSequence, config: AggregationConfig = DEFAULT_AGGREGATION, metric: str = "shift_hold"
) -> list[EventScore]:
    """Mean event probability over each event's frames, thresholded into a decision."""
    if metric not in METRICS:
        raise ValidationError(f"unknown metric {metric!r}; expected one of {METRICS}")
    if probs.frame_rate != events.frame_rate:
        raise ValidationError(f"frame-rate mismatch: events {events.frame_rate} Hz, probabilities {probs.frame_rate} Hz")
    scores = []
    if metric == "shift_hold":
        ns = probs.next_speaker(config)
        for i, g in enumerate(events.gaps):
            track = ns[:, 1 - speaker_index(g.prev_speaker)]
            s = _mean_over(track, g.eval_start, g.eval_end, f"{g.label.value} event {i}")
            scores.append(EventScore(i, g.label.value, int(g.label is GapLabel.SHIFT), s, int(s > config.threshold)))
    elif metric == "shift_pred":
        ns = probs.next_speaker(config)
        for i, r in enumerate(events.shift_pred):
            s = _mean_over(ns[:, speaker_index(r.target_speaker)], r.start, r.end, f"shift_pred event {i}")
            scores.append(EventScore(i, r.kind.value, int(r.polarity is Polarity.POSITIVE), s, int(s > config.threshold)))
    else:
        tracks = {spk: probs.bc_track(spk, config) for spk in SPEAKERS}
        for i, r in enumerate(events.bc_pred):
            s = _mean_over(tracks[r.target_speaker], r.start, r.end, f"bc_pred event {i}")
            scores.append(EventScore(i, r.kind.value, int(r.polarity is Polarity.POSITIVE), s, int(s > config.threshold)))
    return scores


def report_from_scores(metric: str, scores: Sequence[EventScore]) -> EvalReport:
    labels = np.array([s.label for s in scores], dtype=int)
    pred = np.array([s.decision for s in scores], dtype=int)
    tp = int(np.sum((labels == 1) & (pred == 1)))
    fp = int(np.sum((labels == 0) & (pred == 1)))
    fn = int(np.sum((labels == 1) & (pred == 0)))
    tn = int(np.sum((labels == 0) & (pred == 0)))
    return EvalReport.from_confusion(metric, tp, fp, fn, tn)


def evaluate_f1(
    events: EventSet, probs: ProbSequence, config: AggregationConfig = DEFAULT_AGGREGATION, metric: str = "shift_hold"
) -> EvalReport:
    return report_from_scores(metric, score_events(events, probs, config, metric))


def write_report_json(reports: dict[str, EvalReport], path: str | Path) -> None:
    Path(path).write_text(json.dumps({k: r.to_dict() for k, r in reports.items()}, indent=2))


def write_scores_csv(rows: Sequence[tuple[str, EventScore]], path: str | Path) -> None:
    """``rows`` pairs a dialog id with each score."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["dialog", "event_id", "kind", "label", "score", "decision"])
        for dialog, s in rows:
            w.writerow([dialog, s.event_id, s.kind, s.label, f"{s.score:.6f}", s.decision])


# -- short completion point regions ------------------------------------------------

PREDICTIVE_SPAN_S = 0.2


@dataclass(frozen=True)
class ScpRegions:
    hold: float
    predictive: float
    reactive: float


def scp_regions_from_track(
    shift_track: np.ndarray,
    frame_rate: int,
    scp_time: float,
    word_end: float | None = None,
    utterance_start: float = 0.0,
    predictive_span: float = PREDICTIVE_SPAN_S,
) -> ScpRegions:
    """Region means of a per-frame shift-probability track.

    Frames belong to a region by their center time. The reactive value is the last frame
    that ends at or before ``word_end`` (default: ``scp_time``).
    """
    track = np.asarray(shift_track, dtype=np.float64)
    T = len(track)
    word_end = scp_time if word_end is None else word_end
    pred_start = scp_time - predictive_span
    if scp_time <= 0 or scp_time > T / frame_rate + 1e-9:
        raise ValidationError(f"scp_time {scp_time} outside sequence of {T / frame_rate:.3f} s")
    if word_end < pred_start:
        raise ValidationError(f"word_end {word_end} precedes the predictive region start {pred_start}")
    centers = (np.arange(T) + 0.5) / frame_rate
    hold = (centers >= utterance_start) & (centers < pred_start)
    predictive = (centers >= pred_start) & (centers < scp_time)
    if not hold.any():
        raise ValidationError(f"hold region [{utterance_start}, {pred_start}) contains no frames")
    if not predictive.any():
        raise ValidationError(f"predictive region [{pred_start}, {scp_time}) contains no frames")
    reactive = int(np.floor(word_end * frame_rate + 1e-9)) - 1
    if reactive < 0 or reactive >= T:
        raise ValidationError(f"reactive frame {reactive} (word_end {word_end}) outside sequence")
    return ScpRegions(float(track[hold].mean()), float(track[predictive].mean()), float(track[reactive]))


def scp_regions(
    probs: ProbSequence,
    scp_time: float,
    word_end: float | None = None,
    prev_speaker: str = "A",
    config: AggregationConfig = DEFAULT_AGGREGATION,
    utterance_start: float = 0.0,
) -> ScpRegions:
    """(hold, predictive, reactive) shift-probability summary around a completion point."""
    return scp_regions_from_track(
        probs.shift_track(prev_speaker, config), probs.frame_rate, scp_time, word_end, utterance_start
    )
