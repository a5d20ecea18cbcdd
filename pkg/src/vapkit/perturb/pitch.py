"""Frame-wise F0 tracking with the cumulative-mean-normalized difference function."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import median_filter

from vapkit.errors import ValidationError
from vapkit.perturb.audio import Waveform

DEFAULT_F0_MIN = 60.0
DEFAULT_F0_MAX = 400.0
DEFAULT_HOP = 0.01


@dataclass(frozen=True, eq=False)
class F0Contour:
    """Pitch track; ``f0[i]`` is NaN where frame ``i`` is unvoiced."""

    times: np.ndarray
    f0: np.ndarray
    hop: float = DEFAULT_HOP
    f0_min: float = DEFAULT_F0_MIN
    f0_max: float = DEFAULT_F0_MAX

    def __post_init__(self) -> None:
        t = np.asarray(self.times, dtype=np.float64)
        f = np.asarray(self.f0, dtype=np.float64)
        if t.shape != f.shape or t.ndim != 1:
            raise ValidationError("times and f0 must be 1-D arrays of equal length")
        if len(t) > 1 and np.any(np.diff(t) <= 0):
            raise ValidationError("contour times must be strictly increasing")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "f0", f)

    @property
    def voiced(self) -> np.ndarray:
        return np.isfinite(self.f0)

    def __len__(self) -> int:
        return len(self.times)

    def voiced_f0(self, start: float = -np.inf, end: float = np.inf) -> np.ndarray:
        sel = self.voiced & (self.times >= start) & (self.times < end)
        return self.f0[sel]

    def scaled(self, factor: float) -> "F0Contour":
        return F0Contour(self.times, self.f0 * factor, self.hop, self.f0_min, self.f0_max)


def _frame_matrix(x: np.ndarray, centers: np.ndarray, left: int, length: int) -> np.ndarray:
    pad = left + length
    xp = np.pad(x, (pad, pad))
    idx = centers[:, None] - left + pad + np.arange(length)[None, :]
    return xp[idx]


def cmnd(frames: np.ndarray, window: int, max_lag: int) -> np.ndarray:
    """Cumulative-mean-normalized squared difference for lags ``0 .. max_lag``.

    ``frames`` has shape ``(N, window + max_lag)``; row ``n`` holds the analysis window
    followed by ``max_lag`` look-ahead samples.
    """
    n_fft = int(2 ** np.ceil(np.log2(window + max_lag + window)))
    a = frames[:, :window]
    A = np.fft.rfft(a, n_fft)
    B = np.fft.rfft(frames, n_fft)
    cross = np.fft.irfft(np.conj(A) * B, n_fft)[:, : max_lag + 1]
    sq = np.concatenate([np.zeros((len(frames), 1)), np.cumsum(frames**2, axis=1)], axis=1)
    lags = np.arange(max_lag + 1)
    energy_0 = sq[:, window][:, None]
    energy_lag = sq[:, lags + window] - sq[:, lags]
    diff = np.maximum(energy_0 + energy_lag - 2 * cross, 0.0)
    out = np.ones_like(diff)
    csum = np.cumsum(diff[:, 1:], axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        out[:, 1:] = np.where(csum > 0, diff[:, 1:] * lags[1:] / csum, 1.0)
    return out


def estimate_f0(
    wave: Waveform,
    f0_min: float = DEFAULT_F0_MIN,
    f0_max: float = DEFAULT_F0_MAX,
    hop: float = DEFAULT_HOP,
    threshold: float = 0.1,
    voicing_threshold: float = 0.25,
    silence_db: float = -45.0,
) -> F0Contour:
    """Track F0 every ``hop`` seconds.

    Frames are voiced when the normalized difference dips below ``voicing_threshold`` and
    the frame level is within ``silence_db`` of the loudest frame. Octave errors are
    corrected against a running median of the voiced track.
    """
    sr = wave.sample_rate
    if sr < 4 * f0_max:
        raise ValidationError(f"sample rate {sr} Hz too low for f0_max {f0_max} Hz (need >= {4 * f0_max})")
    if not 0 < f0_min < f0_max:
        raise ValidationError(f"invalid F0 search band [{f0_min}, {f0_max}]")
    x = wave.samples
    hop_n = int(round(hop * sr))
    if len(x) == 0:
        return F0Contour(np.zeros(0), np.zeros(0), hop, f0_min, f0_max)
    lag_min = int(np.floor(sr / f0_max))
    lag_max = int(np.ceil(sr / f0_min))
    window = max(lag_max, int(round(0.025 * sr)))
    n_frames = (len(x) - 1) // hop_n + 1
    centers = np.arange(n_frames) * hop_n
    frames = _frame_matrix(x, centers, window // 2, window + lag_max)
    d = cmnd(frames, window, lag_max)

    rms = np.sqrt(np.mean(frames[:, :window] ** 2, axis=1))
    floor = rms.max() * 10 ** (silence_db / 20) if rms.max() > 0 else np.inf
    f0 = np.full(n_frames, np.nan)
    band = d[:, lag_min : lag_max + 1]
    for i in range(n_frames):
        if rms[i] <= floor or rms[i] < 1e-6:
            continue
        row = band[i]
        below = np.flatnonzero(row < threshold)
        if below.size:
            j = below[0]
            while j + 1 < len(row) and row[j + 1] < row[j]:
                j += 1
        else:
            j = int(np.argmin(row))
        if row[j] >= voicing_threshold:
            continue
        lag = j + lag_min
        # parabolic refinement on the normalized difference
        if 0 < j < len(row) - 1:
            y0, y1, y2 = row[j - 1], row[j], row[j + 1]
            denom = y0 - 2 * y1 + y2
            if denom > 0:
                lag = lag + 0.5 * (y0 - y2) / denom
        freq = sr / lag
        if f0_min <= freq <= f0_max:
            f0[i] = freq
    f0 = _fix_octave_jumps(f0, f0_min, f0_max)
    return F0Contour(centers / sr, f0, hop, f0_min, f0_max)


def _fix_octave_jumps(f0: np.ndarray, f0_min: float, f0_max: float, span: int = 11) -> np.ndarray:
    voiced = np.isfinite(f0)
    if voiced.sum() < 3:
        return f0
    out = f0.copy()
    vals = f0[voiced]
    ref = median_filter(np.log2(vals), size=min(span, len(vals)), mode="nearest")
    delta = np.log2(vals) - ref
    fixed = vals.copy()
    up = np.abs(delta - 1.0) < 0.15
    down = np.abs(delta + 1.0) < 0.15
    fixed[up] = vals[up] / 2
    fixed[down] = vals[down] * 2
    ok = (fixed >= f0_min) & (fixed <= f0_max)
    fixed[~ok] = vals[~ok]
    out[voiced] = fixed
    return out


def f0_at(contour: F0Contour, t: np.ndarray) -> np.ndarray:
    """F0 at arbitrary times: linear between neighbouring voiced frames, NaN if either
    enclosing frame is unvoiced."""
    t = np.asarray(t, dtype=np.float64)
    if len(contour) == 0:
        return np.full(t.shape, np.nan)
    pos = np.clip((t - contour.times[0]) / contour.hop, 0, len(contour) - 1)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, len(contour) - 1)
    w = pos - lo
    f_lo, f_hi = contour.f0[lo], contour.f0[hi]
    out = (1 - w) * f_lo + w * f_hi
    # nearest-frame value where exactly one neighbour is voiced
    near = np.where(w < 0.5, f_lo, f_hi)
    only_one = np.isfinite(near) & ~np.isfinite(out)
    out[only_one] = near[only_one]
    return out


@dataclass(frozen=True)
class SyllableStats:
    duration: float
    max_relative_f0: float  # semitones above the utterance median voiced F0


def last_syllable_stats(contour: F0Contour, start: float, end: float) -> SyllableStats:
    """Duration and F0 peak of a syllable relative to the whole contour's median."""
    if end <= start:
        raise ValidationError(f"syllable end {end} <= start {start}")
    inside = contour.voiced_f0(start, end)
    allv = contour.voiced_f0()
    if inside.size == 0 or allv.size == 0:
        return SyllableStats(end - start, float("nan"))
    return SyllableStats(end - start, float(12 * np.log2(inside.max() / np.median(allv))))
