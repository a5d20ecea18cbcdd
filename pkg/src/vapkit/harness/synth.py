"""Synthetic two-party dialogs with prosody-like cue tracks and generation-time ground truth."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from typing import Any, Mapping

import numpy as np

from vapkit.errors import ValidationError
from vapkit.events import BackchannelEvent, EventConfig, GapEvent
from vapkit.va import FRAME_RATES, SPEAKERS, VaGrid

CUE_NAMES = ("pitch", "intensity")


@dataclass(frozen=True)
class SynthDialogSpec:
    """Parameters of the dialog generator. All durations in seconds.

    ``shift_rate`` is the probability that a silence-separated transition changes
    speaker; ``overlap_rate`` the probability that a transition is an overlapped
    speaker change instead; ``bc_rate`` the probability that the listener attempts one
    backchannel during an IPU (skipped when the IPU leaves no room for it).
    """

    duration: float = 60.0
    frame_rate: int = 50
    lead_in: float = 1.0  # initial silence drawn from U(0, lead_in)
    turn_mean: float = 2.5
    turn_std: float = 1.0
    min_turn: float = 1.5
    gap_mean: float = 0.5
    gap_std: float = 0.2
    min_gap: float = 0.2
    overlap_rate: float = 0.1
    max_overlap: float = 0.5
    shift_rate: float = 0.3
    bc_rate: float = 0.3
    bc_min: float = 0.2
    bc_max: float = 0.6
    cues: tuple[str, ...] = CUE_NAMES
    pitch_fall: float = 0.5  # seconds of falling pitch before a yielded turn
    pitch_fall_depth: float = 1.0
    pitch_spread: float = 0.5  # per-speaker baseline drawn from U(-spread, spread)
    pitch_noise: float = 0.15
    intensity_drop: float = 0.2
    intensity_drop_rate: float = 0.5
    intensity_noise: float = 0.1
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "cues", tuple(self.cues))
        for name in ("overlap_rate", "shift_rate", "bc_rate", "intensity_drop_rate"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise ValidationError(f"{name} must be in [0, 1], got {v}")
        for name in ("duration", "turn_mean", "min_turn", "gap_mean", "min_gap", "bc_min", "bc_max", "pitch_fall"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be positive")
        for name in ("lead_in", "turn_std", "gap_std", "pitch_noise", "intensity_noise", "pitch_spread", "max_overlap"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be non-negative")
        if self.frame_rate not in FRAME_RATES:
            raise ValidationError(f"frame_rate must be one of {FRAME_RATES}")
        if self.turn_mean > self.duration:
            raise ValidationError(f"turn_mean {self.turn_mean} s exceeds the dialog duration {self.duration} s")
        if self.min_turn < 1.5 * EventConfig().min_context or self.min_turn < self.max_overlap + EventConfig().min_context:
            raise ValidationError("min_turn must leave one second of exclusive speech at each IPU edge")
        if self.min_gap <= EventConfig().gap_eval_offset + EventConfig().gap_eval_duration:
            raise ValidationError("min_gap must exceed the 150 ms gap evaluation window")
        if self.bc_max > EventConfig().bc_max_duration or self.bc_min > self.bc_max:
            raise ValidationError("backchannel durations must satisfy bc_min <= bc_max <= 1 s")
        unknown = sorted(set(self.cues) - set(CUE_NAMES))
        if unknown:
            raise ValidationError(f"unknown cue(s) {unknown}; available: {CUE_NAMES}")

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["cues"] = list(self.cues)
        return d

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "SynthDialogSpec":
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(raw) - names)
        if unknown:
            raise ValidationError(f"unknown SynthDialogSpec field(s): {', '.join(unknown)}")
        return cls(**raw)


@dataclass(frozen=True)
class Ipu:
    speaker: str
    start: int
    end: int
    yielded: bool  # the next IPU belongs to the other speaker


@dataclass
class SynthDialog:
    grid: VaGrid
    cues: dict[str, np.ndarray]
    gaps: list[GapEvent]
    backchannels: list[BackchannelEvent]
    ipus: list[Ipu] = field(default_factory=list)
    spec: SynthDialogSpec = field(default_factory=SynthDialogSpec)

    @property
    def n_frames(self) -> int:
        return self.grid.n_frames


def _frames(seconds: float, fr: int) -> int:
    return int(round(seconds * fr))


def _draw(rng: np.random.Generator, mean: float, std: float, lo: float, fr: int) -> int:
    return max(_frames(lo, fr), _frames(rng.normal(mean, std), fr))


def generate_dialog(spec: SynthDialogSpec) -> SynthDialog:
    """Sample one dialog. Every random draw comes from ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    fr = spec.frame_rate
    T = _frames(spec.duration, fr)
    ev = EventConfig().frames(fr)
    C = ev.context

    # turn structure: IPUs chained by gap transitions (hold / shift) or overlapped shifts
    plan: list[tuple[int, int, int, str, int]] = []  # speaker, start, end, transition, next start
    cur = int(rng.integers(2))
    t = _frames(rng.uniform(0.0, spec.lead_in), fr)
    while True:
        L = _draw(rng, spec.turn_mean, spec.turn_std, spec.min_turn, fr)
        if t + L > T:
            break
        u = rng.random()
        if u < spec.overlap_rate:
            ov = int(rng.integers(_frames(0.1, fr), max(_frames(0.1, fr), _frames(spec.max_overlap, fr)) + 1))
            kind, nxt = "overlap", t + L - ov
        else:
            g = _draw(rng, spec.gap_mean, spec.gap_std, spec.min_gap, fr)
            kind = "shift" if rng.random() < spec.shift_rate else "hold"
            nxt = t + L + g
        plan.append((cur, t, t + L, kind, nxt))
        cur = cur if kind == "hold" else 1 - cur
        t = nxt

    frames = np.zeros((2, T), dtype=np.uint8)
    ipus: list[Ipu] = []
    gaps: list[GapEvent] = []
    for k, (spk, a, b, kind, nxt) in enumerate(plan):
        last = k == len(plan) - 1
        frames[spk, a:b] = 1
        ipus.append(Ipu(SPEAKERS[spk], a, b, yielded=not last and kind != "hold"))
        if not last and kind != "overlap":
            nspk = spk if kind == "hold" else 1 - spk
            start = b + ev.eval_offset
            gaps.append(GapEvent(b, nxt, SPEAKERS[spk], SPEAKERS[nspk], start, start + ev.eval_len))

    # backchannels by the listener inside an IPU, isolated on the listener's own track
    own_runs: list[list[tuple[int, int]]] = [[], []]
    for spk, a, b, *_ in plan:
        own_runs[spk].append((a, b))
    bc_list: list[tuple[int, int, int]] = []
    for k, (spk, a, b, kind, nxt) in enumerate(plan):
        if rng.random() >= spec.bc_rate:
            continue
        lst = 1 - spk
        d = int(rng.integers(_frames(spec.bc_min, fr), _frames(spec.bc_max, fr) + 1))
        prev_ipu_end = max((e for s_, e in own_runs[lst] if s_ < a), default=-(10**9))
        prev_bc_end = max((e for _, e, who in bc_list if who == lst), default=-(10**9))
        next_start = min((s_ for s_, _ in own_runs[lst] if s_ >= a), default=T)
        # a later backchannel must also respect the post-silence of an earlier one
        lo = max(a + C + 1, prev_ipu_end + ev.bc_pre, prev_bc_end + max(ev.bc_pre, ev.bc_post), ev.bc_pre)
        hi = min(b - C - 1, next_start - ev.bc_post, T - ev.bc_post) - d
        if hi < lo:
            continue
        s = int(rng.integers(lo, hi + 1))
        frames[lst, s : s + d] = 1
        bc_list.append((s, s + d, lst))

    backchannels = []
    for s, e, lst in bc_list:
        before = [r[1] for r in own_runs[lst] if r[1] <= s] + [x[1] for x in bc_list if x[2] == lst and x[1] <= s]
        after = [r[0] for r in own_runs[lst] if r[0] >= e] + [x[0] for x in bc_list if x[2] == lst and x[0] >= e]
        pre = s - max(before, default=0)
        post = min(after, default=T) - e
        backchannels.append(BackchannelEvent(SPEAKERS[lst], s, e, pre, post))
    backchannels.sort(key=lambda x: (x.start, x.speaker))

    grid = VaGrid(fr, frames)
    cues = cue_tracks(spec, rng, frames, ipus)
    return SynthDialog(grid, cues, gaps, backchannels, ipus, spec)


def _smooth_noise(rng: np.random.Generator, n: int, std: float, fr: int, corr_s: float = 0.2) -> np.ndarray:
    """AR(1) noise with unit-``std`` stationary variance and ~``corr_s`` correlation time."""
    if std == 0 or n == 0:
        return np.zeros(n)
    a = np.exp(-1.0 / (corr_s * fr))
    e = rng.normal(0.0, std * np.sqrt(1 - a * a), n)
    out = np.empty(n)
    out[0] = rng.normal(0.0, std)
    for i in range(1, n):
        out[i] = a * out[i - 1] + e[i]
    return out


def cue_tracks(spec: SynthDialogSpec, rng: np.random.Generator, frames: np.ndarray, ipus: list[Ipu]) -> dict[str, np.ndarray]:
    """Cue tracks for a VA layout: ``frames`` is ``(2, T)`` and ``ipus`` marks which turns are yielded."""
    fr = spec.frame_rate
    T = frames.shape[1]
    active = frames.astype(np.float64)
    cues: dict[str, np.ndarray] = {}
    # draw both cues unconditionally so each cue's values do not depend on which others are enabled
    base = rng.uniform(-spec.pitch_spread, spec.pitch_spread, 2)
    pitch = np.stack([base[i] + _smooth_noise(rng, T, spec.pitch_noise, fr) for i in range(2)])
    level = np.stack([1.0 + _smooth_noise(rng, T, spec.intensity_noise, fr) for _ in range(2)])
    fall = _frames(spec.pitch_fall, fr)
    drop = _frames(spec.intensity_drop, fr)
    drops = rng.random(len(ipus)) < spec.intensity_drop_rate
    for ipu, do_drop in zip(ipus, drops):
        if not ipu.yielded:
            continue
        i = SPEAKERS.index(ipu.speaker)
        n = min(fall, ipu.end - ipu.start)
        pitch[i, ipu.end - n : ipu.end] -= spec.pitch_fall_depth * np.arange(1, n + 1) / n
        if do_drop:
            m = min(drop, ipu.end - ipu.start)
            level[i, ipu.end - m : ipu.end] *= 0.5
    if "pitch" in spec.cues:
        cues["pitch"] = (pitch * active).astype(np.float32)
    if "intensity" in spec.cues:
        cues["intensity"] = (level * active).astype(np.float32)
    return cues


def generate_corpus(spec: SynthDialogSpec, n: int) -> list[SynthDialog]:
    """``n`` dialogs with seeds derived from ``spec.seed`` (dialog ``i`` uses a child seed)."""
    seeds = np.random.SeedSequence(spec.seed).spawn(n)
    return [generate_dialog(_with_seed(spec, int(s.generate_state(1)[0]))) for s in seeds]


def _with_seed(spec: SynthDialogSpec, seed: int) -> SynthDialogSpec:
    d = spec.to_dict()
    d["seed"] = seed
    return SynthDialogSpec.from_dict(d)


def ablate_cue(cues: Mapping[str, np.ndarray], name: str) -> dict[str, np.ndarray]:
    """Replace one cue by its per-speaker mean over the dialog; others are copied."""
    if name not in cues:
        raise ValidationError(f"unknown cue {name!r}; have {sorted(cues)}")
    out = {k: np.array(v, copy=True) for k, v in cues.items()}
    track = out[name]
    out[name] = np.broadcast_to(track.mean(axis=1, keepdims=True), track.shape).astype(track.dtype)
    return out


def shift_cue(
    cues: Mapping[str, np.ndarray], name: str, offset: float, active: np.ndarray | None = None
) -> dict[str, np.ndarray]:
    """Add a constant offset to one cue (where ``active`` is set, if given).

    For the log-scale pitch-like cue an offset of ``log(0.9)`` is the analog of scaling
    F0 by 0.9: the contour shape is unchanged.
    """
    if name not in cues:
        raise ValidationError(f"unknown cue {name!r}; have {sorted(cues)}")
    out = {k: np.array(v, copy=True) for k, v in cues.items()}
    add = np.float32(offset) if active is None else (np.asarray(active, dtype=np.float32) * np.float32(offset))
    out[name] = (out[name] + add).astype(out[name].dtype)
    return out
