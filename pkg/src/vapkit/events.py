"""Turn-taking evaluation events extracted from a :class:`~vapkit.va.VaGrid`.

All ranges are half-open frame intervals ``[start, end)``. Frame states used below:
``silence`` (nobody active), ``A-only``, ``B-only`` and ``overlap``.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable

import numpy as np

from vapkit.errors import ValidationError
from vapkit.va import SPEAKERS, VaGrid, active_runs, seconds_to_frames

log = logging.getLogger(__name__)

GAP_EVAL_OFFSET_S = 0.05
GAP_EVAL_DURATION_S = 0.10
REGION_DURATION_S = 0.5
NEGATIVE_HORIZON_S = 2.0
BC_MAX_DURATION_S = 1.0
BC_PRE_SILENCE_S = 1.0
BC_POST_SILENCE_S = 2.0


class GapLabel(str, Enum):
    SHIFT = "shift"
    HOLD = "hold"


class RegionKind(str, Enum):
    SHIFT_PRED = "shift_pred"
    BC_PRED = "bc_pred"


class Polarity(str, Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"


@dataclass(frozen=True)
class EventConfig:
    """Frame-rate independent event parameters (seconds)."""

    min_context: float = 1.0
    gap_eval_offset: float = GAP_EVAL_OFFSET_S
    gap_eval_duration: float = GAP_EVAL_DURATION_S
    region_duration: float = REGION_DURATION_S
    negative_horizon: float = NEGATIVE_HORIZON_S
    bc_max_duration: float = BC_MAX_DURATION_S
    bc_pre_silence: float = BC_PRE_SILENCE_S
    bc_post_silence: float = BC_POST_SILENCE_S

    def __post_init__(self) -> None:
        if self.min_context < 0:
            raise ValidationError(f"min_context must be >= 0, got {self.min_context}")

    def frames(self, frame_rate: int) -> "_Frames":
        return _Frames(
            context=max(1, seconds_to_frames(self.min_context, frame_rate)),
            # first frame whose center lies at or after the offset
            eval_offset=int(math.ceil(self.gap_eval_offset * frame_rate - 0.5 - 1e-9)),
            eval_len=max(1, seconds_to_frames(self.gap_eval_duration, frame_rate)),
            region=max(1, seconds_to_frames(self.region_duration, frame_rate)),
            horizon=seconds_to_frames(self.negative_horizon, frame_rate),
            bc_max=seconds_to_frames(self.bc_max_duration, frame_rate),
            bc_pre=seconds_to_frames(self.bc_pre_silence, frame_rate),
            bc_post=seconds_to_frames(self.bc_post_silence, frame_rate),
        )


@dataclass(frozen=True)
class _Frames:
    context: int
    eval_offset: int
    eval_len: int
    region: int
    horizon: int
    bc_max: int
    bc_pre: int
    bc_post: int


@dataclass(frozen=True)
class GapEvent:
    silence_start: int
    silence_end: int
    prev_speaker: str
    next_speaker: str
    eval_start: int
    eval_end: int

    @property
    def label(self) -> GapLabel:
        return GapLabel.SHIFT if self.prev_speaker != self.next_speaker else GapLabel.HOLD


@dataclass(frozen=True)
class PredictionRegion:
    kind: RegionKind
    polarity: Polarity
    start: int
    end: int
    target_speaker: str


@dataclass(frozen=True)
class BackchannelEvent:
    speaker: str
    start: int
    end: int
    pre_silence: int
    post_silence: int


@dataclass
class EventSet:
    frame_rate: int
    n_frames: int
    gaps: list[GapEvent] = field(default_factory=list)
    shift_pred: list[PredictionRegion] = field(default_factory=list)
    backchannels: list[BackchannelEvent] = field(default_factory=list)
    bc_pred: list[PredictionRegion] = field(default_factory=list)
    # requested minus achieved negatives per region kind
    negative_shortfall: dict[str, int] = field(default_factory=dict)

    def swapped(self) -> "EventSet":
        """The event set of the speaker-swapped grid."""
        sw = {"A": "B", "B": "A"}
        return EventSet(
            self.frame_rate,
            self.n_frames,
            [GapEvent(g.silence_start, g.silence_end, sw[g.prev_speaker], sw[g.next_speaker], g.eval_start, g.eval_end) for g in self.gaps],
            [PredictionRegion(r.kind, r.polarity, r.start, r.end, sw[r.target_speaker]) for r in self.shift_pred],
            [BackchannelEvent(sw[b.speaker], b.start, b.end, b.pre_silence, b.post_silence) for b in self.backchannels],
            [PredictionRegion(r.kind, r.polarity, r.start, r.end, sw[r.target_speaker]) for r in self.bc_pred],
            dict(self.negative_shortfall),
        )


# -- frame-state helpers ------------------------------------------------------


def frame_states(grid: VaGrid) -> np.ndarray:
    """0 = silence, 1 = A only, 2 = B only, 3 = overlap."""
    return grid.frames[0].astype(np.int8) + 2 * grid.frames[1].astype(np.int8)


def _prefix(mask: np.ndarray) -> np.ndarray:
    return np.concatenate(([0], np.cumsum(mask, dtype=np.int64)))


def _window_all(prefix: np.ndarray, starts: np.ndarray, length: int) -> np.ndarray:
    return (prefix[starts + length] - prefix[starts]) == length


def _window_none(prefix: np.ndarray, starts: np.ndarray, length: int) -> np.ndarray:
    return (prefix[starts + length] - prefix[starts]) == 0


# -- Shift / Hold -------------------------------------------------------------


def extract_gaps(grid: VaGrid, min_context: float = 1.0, config: EventConfig | None = None) -> list[GapEvent]:
    """Mutual-silence gaps bounded by clean single-speaker stretches on both sides."""
    cfg = config or EventConfig(min_context=min_context)
    fr = cfg.frames(grid.frame_rate)
    state = frame_states(grid)
    T = len(state)
    silent = (state == 0).astype(np.int8)
    out = []
    for s, e in active_runs(silent):
        if s - fr.context < 0 or e + fr.context > T:
            continue
        if e - s < fr.eval_offset + fr.eval_len:
            continue
        before = state[s - fr.context : s]
        after = state[e : e + fr.context]
        p, n = before[0], after[0]
        if p not in (1, 2) or n not in (1, 2):
            continue
        if not (np.all(before == p) and np.all(after == n)):
            continue
        out.append(
            GapEvent(
                silence_start=s,
                silence_end=e,
                prev_speaker=SPEAKERS[p - 1],
                next_speaker=SPEAKERS[n - 1],
                eval_start=s + fr.eval_offset,
                eval_end=s + fr.eval_offset + fr.eval_len,
            )
        )
    return out


# -- Backchannels -------------------------------------------------------------


def find_backchannels(grid: VaGrid, config: EventConfig | None = None) -> list[BackchannelEvent]:
    """Short VA segments isolated by silence on the owning speaker's own track."""
    cfg = config or EventConfig()
    fr = cfg.frames(grid.frame_rate)
    T = grid.n_frames
    out = []
    for i, spk in enumerate(SPEAKERS):
        runs = active_runs(grid.frames[i])
        for k, (a, b) in enumerate(runs):
            if b - a > fr.bc_max:
                continue
            pre = a - (runs[k - 1][1] if k > 0 else 0)
            post = (runs[k + 1][0] if k + 1 < len(runs) else T) - b
            # the required silences must be observed inside the grid
            if a - fr.bc_pre < 0 or b + fr.bc_post > T:
                continue
            if pre >= fr.bc_pre and post >= fr.bc_post:
                out.append(BackchannelEvent(spk, a, b, pre, post))
    return sorted(out, key=lambda ev: (ev.start, ev.speaker))


def _bc_positive_regions(bcs: Iterable[BackchannelEvent], region: int) -> list[PredictionRegion]:
    return [
        PredictionRegion(RegionKind.BC_PRED, Polarity.POSITIVE, ev.start - region, ev.start, ev.speaker)
        for ev in bcs
        if ev.start - region >= 0
    ]


def _shift_positive_regions(grid: VaGrid, gaps: Iterable[GapEvent], region: int) -> list[PredictionRegion]:
    state = frame_states(grid)
    out = []
    for g in gaps:
        if g.label is not GapLabel.SHIFT:
            continue
        lo = g.silence_start - region
        if lo < 0:
            continue
        if not np.all(state[lo : g.silence_start] == SPEAKERS.index(g.prev_speaker) + 1):
            continue
        out.append(PredictionRegion(RegionKind.SHIFT_PRED, Polarity.POSITIVE, lo, g.silence_start, g.next_speaker))
    return out


def _excluded_starts(T: int, windows: Iterable[tuple[int, int]], length: int) -> np.ndarray:
    """Mask of window starts ``w`` whose ``[w, w+length)`` overlaps any of ``windows``."""
    mask = np.zeros(max(T, 0) + 1, dtype=bool)
    for lo, hi in windows:
        # [w, w+length) overlaps [lo, hi) iff lo - length < w < hi
        mask[max(0, lo - length + 1) : max(0, min(hi, T + 1))] = True
    return mask


# -- negative candidate sets ---------------------------------------------------


def shift_negative_candidates(
    grid: VaGrid, gaps: list[GapEvent] | None = None, config: EventConfig | None = None
) -> list[tuple[int, str]]:
    """All ``(start, target_speaker)`` windows eligible as Shift-prediction negatives.

    The window must hold single-speaker activity of one speaker, the other (target) speaker
    must stay silent for the negative horizon after it, and it may not overlap the window
    preceding any Shift, Hold or backchannel.
    """
    cfg = config or EventConfig()
    fr = cfg.frames(grid.frame_rate)
    if gaps is None:
        gaps = extract_gaps(grid, config=cfg)
    T = grid.n_frames
    L, H = fr.region, fr.horizon
    n_starts = T - L - H + 1
    if n_starts <= 0:
        return []
    excluded = [(g.silence_start - L, g.silence_start) for g in gaps]
    excluded += [(r.start, r.end) for r in _bc_positive_regions(find_backchannels(grid, cfg), L)]
    blocked = _excluded_starts(T, excluded, L)[:n_starts]
    state = frame_states(grid)
    starts = np.arange(n_starts)
    out: list[tuple[int, str]] = []
    for i, spk in enumerate(SPEAKERS):
        only = _prefix(state == i + 1)
        other_active = _prefix(grid.frames[1 - i])
        ok = _window_all(only, starts, L) & _window_none(other_active, starts, L + H) & ~blocked
        out.extend((int(w), SPEAKERS[1 - i]) for w in np.flatnonzero(ok))
    return sorted(out)


def bc_negative_candidates(grid: VaGrid, gaps: list[GapEvent] | None = None, config: EventConfig | None = None) -> list[tuple[int, str]]:
    """All ``(start, listener)`` windows eligible as backchannel-prediction negatives.

    The listener must stay silent over the window and the negative horizon after it; the
    other speaker may be active or silent. Windows preceding a Shift or backchannel are excluded.
    """
    cfg = config or EventConfig()
    fr = cfg.frames(grid.frame_rate)
    if gaps is None:
        gaps = extract_gaps(grid, config=cfg)
    T = grid.n_frames
    L, H = fr.region, fr.horizon
    n_starts = T - L - H + 1
    if n_starts <= 0:
        return []
    excluded = [(g.silence_start - L, g.silence_start) for g in gaps if g.label is GapLabel.SHIFT]
    excluded += [(r.start, r.end) for r in _bc_positive_regions(find_backchannels(grid, cfg), L)]
    blocked = _excluded_starts(T, excluded, L)[:n_starts]
    starts = np.arange(n_starts)
    out: list[tuple[int, str]] = []
    for i, spk in enumerate(SPEAKERS):
        own = _prefix(grid.frames[i])
        ok = _window_none(own, starts, L + H) & ~blocked
        out.extend((int(w), spk) for w in np.flatnonzero(ok))
    return sorted(out)


def _sample_negatives(
    candidates: list[tuple[int, str]], n: int, kind: RegionKind, region: int, rng: np.random.Generator
) -> tuple[list[PredictionRegion], int]:
    k = min(n, len(candidates))
    if k < n:
        log.warning("%s: only %d of %d negatives available", kind.value, k, n)
    if k == 0:
        return [], n
    picked = sorted(rng.choice(len(candidates), size=k, replace=False).tolist())
    regions = [
        PredictionRegion(kind, Polarity.NEGATIVE, candidates[j][0], candidates[j][0] + region, candidates[j][1])
        for j in picked
    ]
    return regions, n - k


def _as_rng(rng: np.random.Generator | int | None) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def shift_prediction_regions(
    grid: VaGrid,
    gaps: list[GapEvent],
    rng: np.random.Generator | int | None = 0,
    config: EventConfig | None = None,
) -> list[PredictionRegion]:
    """Positives: the last 500 ms of the previous speaker before each Shift.
    Negatives: count-matched uniform sample of :func:`shift_negative_candidates`."""
    return _shift_prediction_regions(grid, gaps, _as_rng(rng), config or EventConfig())[0]


def _shift_prediction_regions(grid, gaps, rng, cfg) -> tuple[list[PredictionRegion], int]:
    L = cfg.frames(grid.frame_rate).region
    positives = _shift_positive_regions(grid, gaps, L)
    if not positives:
        return [], 0
    candidates = shift_negative_candidates(grid, gaps, cfg)
    negatives, short = _sample_negatives(candidates, len(positives), RegionKind.SHIFT_PRED, L, rng)
    return positives + negatives, short


def backchannel_regions(
    grid: VaGrid,
    rng: np.random.Generator | int | None = 0,
    config: EventConfig | None = None,
    gaps: list[GapEvent] | None = None,
) -> tuple[list[BackchannelEvent], list[PredictionRegion]]:
    """Backchannel events plus count-matched positive/negative prediction regions."""
    bcs, regions, _ = _backchannel_regions(grid, _as_rng(rng), config or EventConfig(), gaps)
    return bcs, regions


def _backchannel_regions(grid, rng, cfg, gaps):
    L = cfg.frames(grid.frame_rate).region
    bcs = find_backchannels(grid, cfg)
    positives = _bc_positive_regions(bcs, L)
    if not positives:
        return bcs, [], 0
    candidates = bc_negative_candidates(grid, gaps, cfg)
    negatives, short = _sample_negatives(candidates, len(positives), RegionKind.BC_PRED, L, rng)
    return bcs, positives + negatives, short


def extract_events(
    grid: VaGrid, rng: np.random.Generator | int | None = 0, config: EventConfig | None = None
) -> EventSet:
    """All events of one dialog. The RNG only drives negative sampling."""
    cfg = config or EventConfig()
    gen = _as_rng(rng)
    gaps = extract_gaps(grid, config=cfg)
    shift_pred, shift_short = _shift_prediction_regions(grid, gaps, gen, cfg)
    bcs, bc_pred, bc_short = _backchannel_regions(grid, gen, cfg, gaps)
    return EventSet(
        frame_rate=grid.frame_rate,
        n_frames=grid.n_frames,
        gaps=gaps,
        shift_pred=shift_pred,
        backchannels=bcs,
        bc_pred=bc_pred,
        negative_shortfall={RegionKind.SHIFT_PRED.value: shift_short, RegionKind.BC_PRED.value: bc_short},
    )


# -- serialization ---------------------------------------------------------------


def event_records(events: EventSet) -> list[dict]:
    """Flat JSON-ready records, one per event."""
    fr = events.frame_rate
    recs: list[dict] = []
    for g in events.gaps:
        recs.append(
            {
                "kind": g.label.value,
                "prev_speaker": g.prev_speaker,
                "next_speaker": g.next_speaker,
                "frame_start": g.eval_start,
                "frame_end": g.eval_end,
                "silence_start": g.silence_start,
                "silence_end": g.silence_end,
                "frame_rate": fr,
            }
        )
    for r in events.shift_pred + events.bc_pred:
        recs.append(
            {
                "kind": r.kind.value,
                "polarity": r.polarity.value,
                "speaker": r.target_speaker,
                "frame_start": r.start,
                "frame_end": r.end,
                "frame_rate": fr,
            }
        )
    for b in events.backchannels:
        recs.append({"kind": "backchannel", "speaker": b.speaker, "frame_start": b.start, "frame_end": b.end, "frame_rate": fr})
    return recs


def write_events_jsonl(events: EventSet, path: str | Path) -> None:
    with Path(path).open("w") as fh:
        for rec in event_records(events):
            fh.write(json.dumps(rec) + "\n")


def read_events_jsonl(path: str | Path, n_frames: int | None = None) -> EventSet:
    recs = [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
    if not recs:
        raise ValidationError(f"{path}: no events")
    fr = int(recs[0]["frame_rate"])
    ev = EventSet(frame_rate=fr, n_frames=n_frames or max(r["frame_end"] for r in recs))
    for r in recs:
        if int(r["frame_rate"]) != fr:
            raise ValidationError(f"{path}: mixed frame rates")
        kind = r["kind"]
        if kind in ("shift", "hold"):
            ev.gaps.append(GapEvent(r["silence_start"], r["silence_end"], r["prev_speaker"], r["next_speaker"], r["frame_start"], r["frame_end"]))
        elif kind in ("shift_pred", "bc_pred"):
            region = PredictionRegion(RegionKind(kind), Polarity(r["polarity"]), r["frame_start"], r["frame_end"], r["speaker"])
            (ev.shift_pred if kind == "shift_pred" else ev.bc_pred).append(region)
        elif kind == "backchannel":
            ev.backchannels.append(BackchannelEvent(r["speaker"], r["frame_start"], r["frame_end"], -1, -1))
        else:
            raise ValidationError(f"{path}: unknown event kind {kind!r}")
    return ev


def events_summary(events: EventSet) -> dict:
    n_shift = sum(g.label is GapLabel.SHIFT for g in events.gaps)
    return {
        "shift": n_shift,
        "hold": len(events.gaps) - n_shift,
        "shift_pred": _polarity_counts(events.shift_pred),
        "bc_pred": _polarity_counts(events.bc_pred),
        "backchannel": len(events.backchannels),
        "negative_shortfall": dict(events.negative_shortfall),
    }


def _polarity_counts(regions: list[PredictionRegion]) -> dict:
    pos = sum(r.polarity is Polarity.POSITIVE for r in regions)
    return {"positive": pos, "negative": len(regions) - pos}

