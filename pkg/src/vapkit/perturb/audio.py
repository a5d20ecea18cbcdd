"""Waveform container, WAV and alignment file I/O."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

from vapkit.errors import ValidationError

CANONICAL_SR = 16000


@dataclass(frozen=True, eq=False)
class Waveform:
    samples: np.ndarray
    sample_rate: int = CANONICAL_SR
    speaker: str | None = None

    def __post_init__(self) -> None:
        x = np.asarray(self.samples, dtype=np.float64)
        if x.ndim != 1:
            raise ValidationError(f"waveform must be 1-D, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValidationError("waveform contains non-finite samples")
        if self.sample_rate <= 0:
            raise ValidationError(f"sample_rate must be positive, got {self.sample_rate}")
        x = x.copy()
        x.setflags(write=False)
        object.__setattr__(self, "samples", x)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate

    def __len__(self) -> int:
        return len(self.samples)

    def replace(self, samples: np.ndarray) -> "Waveform":
        return Waveform(samples, self.sample_rate, self.speaker)


def normalize_peak(wave: Waveform, dbfs: float = -3.0) -> Waveform:
    """Scale so the absolute peak sits at ``dbfs``; silence is returned unchanged."""
    peak = float(np.max(np.abs(wave.samples))) if len(wave) else 0.0
    if peak == 0.0:
        return wave
    return wave.replace(wave.samples * (10 ** (dbfs / 20) / peak))


def resample(wave: Waveform, sample_rate: int = CANONICAL_SR) -> Waveform:
    if wave.sample_rate == sample_rate:
        return wave
    g = np.gcd(int(wave.sample_rate), int(sample_rate))
    y = resample_poly(wave.samples, sample_rate // g, wave.sample_rate // g)
    return Waveform(y, sample_rate, wave.speaker)


def read_wav(path: str | Path, speakers: Iterable[str] = ("A", "B")) -> list[Waveform]:
    """One :class:`Waveform` per channel, scaled to [-1, 1]."""
    sr, data = wavfile.read(str(path))
    if np.issubdtype(data.dtype, np.integer):
        info = np.iinfo(data.dtype)
        data = (data.astype(np.float64) - (info.max + 1 + info.min) / 2) / (info.max + 1)
    data = np.asarray(data, dtype=np.float64)
    if data.ndim == 1:
        data = data[:, None]
    names = list(speakers)
    return [Waveform(data[:, c], int(sr), names[c] if c < len(names) else None) for c in range(data.shape[1])]


def write_wav(path: str | Path, waves: Waveform | list[Waveform], float_pcm: bool = False) -> None:
    """Write mono, or one channel per waveform (all must share rate and length)."""
    waves = [waves] if isinstance(waves, Waveform) else list(waves)
    rates = {w.sample_rate for w in waves}
    if len(rates) != 1:
        raise ValidationError(f"channels have different sample rates: {sorted(rates)}")
    n = max(len(w) for w in waves)
    data = np.zeros((n, len(waves)))
    for c, w in enumerate(waves):
        data[: len(w), c] = w.samples
    data = data[:, 0] if len(waves) == 1 else data
    if float_pcm:
        wavfile.write(str(path), rates.pop(), data.astype(np.float32))
    else:
        wavfile.write(str(path), rates.pop(), np.round(np.clip(data, -1.0, 32767 / 32768) * 32768).astype(np.int16))


def mix_to_mono(waves: list[Waveform]) -> Waveform:
    if not waves:
        raise ValidationError("nothing to mix")
    n = max(len(w) for w in waves)
    out = np.zeros(n)
    for w in waves:
        if w.sample_rate != waves[0].sample_rate:
            raise ValidationError("cannot mix different sample rates")
        out[: len(w)] += w.samples
    return Waveform(out, waves[0].sample_rate)


@dataclass(frozen=True)
class PhoneAlignment:
    phones: tuple[tuple[str, float, float], ...]

    def __post_init__(self) -> None:
        prev_end = -np.inf
        for label, start, end in self.phones:
            if end <= start:
                raise ValidationError(f"phone {label!r} has end {end} <= start {start}")
            if start < prev_end - 1e-9:
                raise ValidationError(f"phone {label!r} at {start} overlaps or is out of order")
            prev_end = end

    def __len__(self) -> int:
        return len(self.phones)


def read_alignment(path: str | Path) -> PhoneAlignment:
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    try:
        return PhoneAlignment(tuple((r["phone"], float(r["start"]), float(r["end"])) for r in rows))
    except (KeyError, ValueError) as exc:
        raise ValidationError(f"{path}: bad alignment row: {exc}") from None


def read_phone_means(path: str | Path) -> dict[str, float]:
    raw = json.loads(Path(path).read_text())
    if not isinstance(raw, Mapping):
        raise ValidationError(f"{path}: expected a JSON object mapping phone -> seconds")
    return {str(k): float(v) for k, v in raw.items()}


def phone_means_from_alignments(alignments: Iterable[PhoneAlignment]) -> dict[str, float]:
    """Average duration of each phone label over a collection of alignments."""
    sums: dict[str, float] = {}
    counts: dict[str, int] = {}
    for al in alignments:
        for label, start, end in al.phones:
            sums[label] = sums.get(label, 0.0) + (end - start)
            counts[label] = counts.get(label, 0) + 1
    return {k: sums[k] / counts[k] for k in sums}
