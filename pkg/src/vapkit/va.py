"""Voice-activity rasterization, the projection-label codec and VA-history features.

Bit layout of a projection label (fixed for the whole toolkit)::

    bit index   0    1    2    3    4    5    6    7
    meaning    A1   A2   A3   A4   B1   B2   B3   B4      (bin 1 = nearest future)
    weight    128   64   32   16    8    4    2    1

so "A active over the whole window, B silent" is ``11110000`` = class 240.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from vapkit.errors import ValidationError

SPEAKERS = ("A", "B")
FRAME_RATES = (20, 50, 100)
N_CLASSES = 256
N_BITS = 8
PROJECTION_WINDOW_S = 2.0
# past regions (seconds before the current frame) summarised by the history features
HISTORY_REGIONS_S = ((math.inf, 60.0), (60.0, 30.0), (30.0, 10.0), (10.0, 5.0), (5.0, 0.0))

_BIT_WEIGHTS = 1 << np.arange(N_BITS - 1, -1, -1)


def speaker_index(speaker: str) -> int:
    try:
        return SPEAKERS.index(speaker)
    except ValueError:
        raise ValidationError(f"unknown speaker {speaker!r}; expected one of {SPEAKERS}") from None


def other_speaker(speaker: str) -> str:
    return SPEAKERS[1 - speaker_index(speaker)]


def seconds_to_frames(seconds: float, frame_rate: float) -> int:
    """Duration in seconds to a whole number of frames (nearest)."""
    return int(round(seconds * frame_rate + 1e-9))


def num_frames(duration: float, frame_rate: float) -> int:
    """Frames needed to cover ``duration`` seconds: ``ceil(duration * frame_rate)``."""
    return int(math.ceil(duration * frame_rate - 1e-9))


@dataclass(frozen=True)
class VaSegment:
    speaker: str
    start: float
    end: float

    def __post_init__(self) -> None:
        if self.speaker not in SPEAKERS:
            raise ValidationError(f"unknown speaker in segment {self}")
        if not (math.isfinite(self.start) and math.isfinite(self.end)):
            raise ValidationError(f"non-finite time in segment {self}")
        if self.start < 0 or self.end < 0:
            raise ValidationError(f"negative time in segment {self}")
        if self.end <= self.start:
            raise ValidationError(f"segment end must exceed start: {self}")

    @property
    def duration(self) -> float:
        return self.end - self.start


def merge_segments(segments: Iterable[VaSegment]) -> list[VaSegment]:
    """Sort per speaker and union overlapping or touching segments."""
    out: list[VaSegment] = []
    for spk in SPEAKERS:
        own = sorted((s for s in segments if s.speaker == spk), key=lambda s: s.start)
        cur: VaSegment | None = None
        for seg in own:
            if cur is not None and seg.start <= cur.end:
                cur = VaSegment(spk, cur.start, max(cur.end, seg.end))
            else:
                if cur is not None:
                    out.append(cur)
                cur = seg
        if cur is not None:
            out.append(cur)
    return out


@dataclass(frozen=True, eq=False)
class VaGrid:
    """Binary voice activity of both speakers, ``frames[speaker, t]``."""

    frame_rate: int
    frames: np.ndarray

    def __post_init__(self) -> None:
        if self.frame_rate <= 0:
            raise ValidationError(f"frame_rate must be positive, got {self.frame_rate}")
        arr = np.asarray(self.frames)
        if arr.ndim != 2 or arr.shape[0] != 2:
            raise ValidationError(f"VA frames must have shape (2, T), got {arr.shape}")
        if arr.size and not np.isin(arr, (0, 1)).all():
            raise ValidationError("VA frames must be binary")
        arr = arr.astype(np.uint8, copy=True)
        arr.setflags(write=False)
        object.__setattr__(self, "frames", arr)

    @property
    def n_frames(self) -> int:
        return int(self.frames.shape[1])

    @property
    def duration(self) -> float:
        return self.n_frames / self.frame_rate

    def frame_center(self, t: int | np.ndarray) -> float | np.ndarray:
        return (np.asarray(t) + 0.5) / self.frame_rate

    def swapped(self) -> "VaGrid":
        return VaGrid(self.frame_rate, self.frames[::-1])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, VaGrid):
            return NotImplemented
        return self.frame_rate == other.frame_rate and np.array_equal(self.frames, other.frames)

    def __hash__(self) -> int:
        return hash((self.frame_rate, self.frames.tobytes()))


def rasterize_va(segments: Sequence[VaSegment], frame_rate: int, duration: float | None = None) -> VaGrid:
    """Frame ``t`` is active for a speaker iff its center ``(t + 0.5) / frame_rate`` lies in
    ``[start, end)`` of one of that speaker's segments."""
    for seg in segments:
        if not isinstance(seg, VaSegment):
            raise ValidationError(f"not a VaSegment: {seg!r}")
    max_end = max((s.end for s in segments), default=0.0)
    if duration is None:
        duration = max_end
    if duration < max_end - 1e-9:
        raise ValidationError(f"duration {duration} shorter than last segment end {max_end}")
    T = num_frames(duration, frame_rate)
    frames = np.zeros((2, T), dtype=np.uint8)
    for seg in segments:
        # first frame with center >= start, first frame with center >= end
        lo = max(0, int(math.ceil(seg.start * frame_rate - 0.5 - 1e-9)))
        hi = min(T, int(math.ceil(seg.end * frame_rate - 0.5 - 1e-9)))
        if hi > lo:
            frames[speaker_index(seg.speaker), lo:hi] = 1
    return VaGrid(frame_rate, frames)


def grid_to_segments(grid: VaGrid) -> list[VaSegment]:
    """Inverse of rasterization on frame boundaries (each active run becomes a segment)."""
    out = []
    for i, spk in enumerate(SPEAKERS):
        for start, end in active_runs(grid.frames[i]):
            out.append(VaSegment(spk, start / grid.frame_rate, end / grid.frame_rate))
    return out


def active_runs(row: np.ndarray) -> list[tuple[int, int]]:
    """Maximal runs of ones in a binary vector as ``[start, end)`` pairs."""
    padded = np.concatenate(([0], np.asarray(row, dtype=np.int8), [0]))
    diff = np.diff(padded)
    starts = np.flatnonzero(diff == 1)
    ends = np.flatnonzero(diff == -1)
    return list(zip(starts.tolist(), ends.tolist()))


@dataclass(frozen=True)
class BinConfig:
    """Per-speaker partition of the 2 s projection window into four bins (seconds)."""

    bin_durations: tuple[float, ...] = (0.2, 0.4, 0.6, 0.8)

    def __post_init__(self) -> None:
        durs = tuple(float(d) for d in self.bin_durations)
        if len(durs) != 4:
            raise ValidationError(f"expected 4 bin durations, got {len(durs)}")
        if any(d <= 0 for d in durs):
            raise ValidationError(f"bin durations must be positive: {durs}")
        if abs(sum(durs) - PROJECTION_WINDOW_S) > 1e-6:
            raise ValidationError(f"bin durations must sum to {PROJECTION_WINDOW_S} s, got {sum(durs)}")
        object.__setattr__(self, "bin_durations", durs)

    def frame_edges(self, frame_rate: int) -> np.ndarray:
        """Cumulative bin boundaries in frames relative to the first future frame."""
        edges = np.concatenate(([0.0], np.cumsum(self.bin_durations)))
        out = np.array([seconds_to_frames(e, frame_rate) for e in edges])
        if np.any(np.diff(out) <= 0):
            raise ValidationError(f"bins {self.bin_durations} collapse at {frame_rate} Hz")
        return out

    def horizon(self, frame_rate: int) -> int:
        return int(self.frame_edges(frame_rate)[-1])


DEFAULT_BINS = BinConfig()


@dataclass(frozen=True)
class ProjectionLabel:
    bits: tuple[int, ...]
    class_index: int

    @property
    def pattern(self) -> str:
        return "".join(str(b) for b in self.bits)

    def speaker_bins(self, speaker: str) -> tuple[int, ...]:
        i = speaker_index(speaker)
        return self.bits[4 * i : 4 * i + 4]


def pack_bits(bits: Sequence[int]) -> int:
    if len(bits) != N_BITS or any(b not in (0, 1) for b in bits):
        raise ValidationError(f"expected 8 binary values, got {bits!r}")
    return int(np.dot(np.asarray(bits, dtype=np.int64), _BIT_WEIGHTS))


def decode_class(class_index: int) -> ProjectionLabel:
    if not (0 <= int(class_index) < N_CLASSES) or int(class_index) != class_index:
        raise ValidationError(f"class index out of range 0..255: {class_index}")
    idx = int(class_index)
    bits = tuple((idx >> (N_BITS - 1 - i)) & 1 for i in range(N_BITS))
    return ProjectionLabel(bits, idx)


def class_bit_table() -> np.ndarray:
    """``(256, 2, 4)`` table: ``table[c, speaker, bin]`` is the bit of class ``c``."""
    idx = np.arange(N_CLASSES)[:, None]
    bits = (idx >> np.arange(N_BITS - 1, -1, -1)[None, :]) & 1
    return bits.reshape(N_CLASSES, 2, 4).astype(np.uint8)


def encode_projection(grid: VaGrid, t: int, bins: BinConfig = DEFAULT_BINS) -> ProjectionLabel:
    """Label of frame ``t``: the future window covers frames ``t+1 .. t+horizon``."""
    edges = bins.frame_edges(grid.frame_rate)
    horizon = int(edges[-1])
    if t < 0 or t + horizon >= grid.n_frames:
        raise ValidationError(
            f"projection window of frame {t} ends at frame {t + horizon}, grid has {grid.n_frames} frames"
        )
    future = grid.frames[:, t + 1 : t + 1 + horizon]
    bits = []
    for row in future:
        for k in range(4):
            chunk = row[edges[k] : edges[k + 1]]
            bits.append(int(2 * int(chunk.sum()) > len(chunk)))
    return ProjectionLabel(tuple(bits), pack_bits(bits))


def projection_labels(grid: VaGrid, bins: BinConfig = DEFAULT_BINS, ignore_index: int = -100) -> np.ndarray:
    """Class index of every frame; frames without a complete future window get ``ignore_index``."""
    edges = bins.frame_edges(grid.frame_rate)
    horizon = int(edges[-1])
    T = grid.n_frames
    labels = np.full(T, ignore_index, dtype=np.int64)
    n_valid = T - horizon
    if n_valid <= 0:
        return labels
    csum = np.concatenate((np.zeros((2, 1), dtype=np.int64), np.cumsum(grid.frames, axis=1, dtype=np.int64)), axis=1)
    t = np.arange(n_valid)
    cls = np.zeros(n_valid, dtype=np.int64)
    bit = 0
    for spk in range(2):
        for k in range(4):
            lo = t + 1 + edges[k]
            hi = t + 1 + edges[k + 1]
            active = csum[spk, hi] - csum[spk, lo]
            on = 2 * active > (edges[k + 1] - edges[k])
            cls |= on.astype(np.int64) << (N_BITS - 1 - bit)
            bit += 1
    labels[:n_valid] = cls
    return labels


@dataclass(frozen=True)
class VaHistory:
    ratios: tuple[float, ...] = field(default=(0.5,) * 5)


def _history_bounds(t: np.ndarray, frame_rate: int) -> list[tuple[np.ndarray, np.ndarray]]:
    bounds = []
    for far, near in HISTORY_REGIONS_S:
        lo = np.zeros_like(t) if math.isinf(far) else np.maximum(t - seconds_to_frames(far, frame_rate), 0)
        hi = np.maximum(t - seconds_to_frames(near, frame_rate), 0)
        bounds.append((lo, hi))
    return bounds


def va_history_track(grid: VaGrid) -> np.ndarray:
    """``(T, 5)`` A-activity share for each past region of every frame.

    Regions exclude the current frame; a region without any speech yields 0.5.
    """
    T = grid.n_frames
    csum = np.concatenate((np.zeros((2, 1), dtype=np.int64), np.cumsum(grid.frames, axis=1, dtype=np.int64)), axis=1)
    t = np.arange(T)
    out = np.full((T, len(HISTORY_REGIONS_S)), 0.5)
    for r, (lo, hi) in enumerate(_history_bounds(t, grid.frame_rate)):
        a = csum[0, hi] - csum[0, lo]
        b = csum[1, hi] - csum[1, lo]
        tot = a + b
        nz = tot > 0
        out[nz, r] = a[nz] / tot[nz]
    return out


def va_history(grid: VaGrid, t: int) -> VaHistory:
    if not 0 <= t < grid.n_frames:
        raise ValidationError(f"frame {t} outside grid of {grid.n_frames} frames")
    ratios = []
    for lo, hi in _history_bounds(np.array([t]), grid.frame_rate):
        a = int(grid.frames[0, lo[0] : hi[0]].sum())
        b = int(grid.frames[1, lo[0] : hi[0]].sum())
        ratios.append(a / (a + b) if a + b else 0.5)
    return VaHistory(tuple(ratios))


# -- file formats -------------------------------------------------------------


def load_va_annotations(path: str | Path) -> list[VaSegment]:
    """Read ``[{speaker, start, end}, ...]`` JSON or a ``speaker,start,end`` CSV."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        with path.open(newline="") as fh:
            rows = list(csv.DictReader(fh))
    else:
        rows = json.loads(path.read_text())
        if not isinstance(rows, list):
            raise ValidationError(f"{path}: expected a JSON array of segments")
    segments = []
    for i, row in enumerate(rows):
        try:
            segments.append(VaSegment(str(row["speaker"]), float(row["start"]), float(row["end"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"{path}: bad segment #{i} {row!r}: {exc}") from None
    return segments


def save_va_annotations(segments: Iterable[VaSegment], path: str | Path) -> None:
    path = Path(path)
    rows = [{"speaker": s.speaker, "start": round(s.start, 6), "end": round(s.end, 6)} for s in segments]
    if path.suffix.lower() == ".csv":
        with path.open("w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["speaker", "start", "end"])
            writer.writeheader()
            writer.writerows(rows)
    else:
        path.write_text(json.dumps(rows, indent=1))


def grid_to_csv(grid: VaGrid, path: str | Path) -> None:
    """Debug dump: one row per frame, columns ``frame,time,A,B``."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame", "time", "A", "B"])
        for t in range(grid.n_frames):
            writer.writerow([t, f"{(t + 0.5) / grid.frame_rate:.4f}", int(grid.frames[0, t]), int(grid.frames[1, t])])
