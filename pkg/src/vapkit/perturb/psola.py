"""Pitch-synchronous overlap-add resynthesis: F0 flattening, F0 scaling and
per-phone duration scaling."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.signal import butter, sosfiltfilt

from vapkit.errors import ValidationError
from vapkit.perturb.audio import PhoneAlignment, Waveform
from vapkit.perturb.pitch import F0Contour, f0_at
from vapkit.va import VaSegment

log = logging.getLogger(__name__)

UNVOICED_PERIOD_S = 0.005
CROSSFADE_S = 0.005


@dataclass(frozen=True)
class PitchMarks:
    """Analysis epochs (sample indices) with their local period in samples."""

    positions: np.ndarray
    periods: np.ndarray
    voiced: np.ndarray


def voiced_sample_mask(contour: F0Contour, n_samples: int, sample_rate: int) -> np.ndarray:
    """Samples covered by voiced contour frames (each frame spans one hop around its time)."""
    mask = np.zeros(n_samples, dtype=bool)
    half = contour.hop / 2
    for t in contour.times[contour.voiced]:
        lo = max(0, int(round((t - half) * sample_rate)))
        hi = min(n_samples, int(round((t + half) * sample_rate)))
        mask[lo:hi] = True
    return mask


def _runs(mask: np.ndarray) -> list[tuple[int, int]]:
    padded = np.concatenate(([False], mask, [False])).astype(np.int8)
    d = np.diff(padded)
    return list(zip(np.flatnonzero(d == 1).tolist(), np.flatnonzero(d == -1).tolist()))


def find_pitch_marks(wave: Waveform, contour: F0Contour) -> PitchMarks:
    """Place one epoch per period on positive peaks of the low-passed signal in voiced
    regions, and fixed-rate marks in unvoiced regions."""
    x = wave.samples
    sr = wave.sample_rate
    n = len(x)
    voiced = voiced_sample_mask(contour, n, sr)
    cutoff = min(0.45 * sr, 1.5 * contour.f0_max)
    smooth = sosfiltfilt(butter(4, cutoff, fs=sr, output="sos"), x) if n > 30 else x
    f0_track = f0_at(contour, np.arange(n) / sr)
    pu = max(2, int(round(UNVOICED_PERIOD_S * sr)))

    positions: list[int] = []
    periods: list[float] = []
    flags: list[bool] = []
    cursor = 0
    for s0, s1 in _runs(voiced) + [(n, n)]:
        for p in range(cursor, s0, pu):
            positions.append(p)
            periods.append(float(pu))
            flags.append(False)
        if s0 >= n:
            break
        def period_at(i: int) -> float:
            f = f0_track[min(max(i, 0), n - 1)]
            return sr / f if np.isfinite(f) else sr / np.nanmedian(contour.voiced_f0())
        P = period_at(s0)
        first = s0 + int(np.argmax(smooth[s0 : min(s1, s0 + int(np.ceil(P)))]))
        m = first
        while m < s1:
            positions.append(m)
            P = period_at(m)
            periods.append(P)
            flags.append(True)
            pred = m + P
            lo = int(round(pred - 0.25 * P))
            hi = int(round(pred + 0.25 * P)) + 1
            if lo >= s1:
                break
            lo = max(lo, m + 1)
            hi = min(hi, n)
            if hi <= lo:
                break
            m = lo + int(np.argmax(smooth[lo:hi]))
        cursor = max(s1, positions[-1] + 1)
    order = np.argsort(positions, kind="stable")
    return PitchMarks(
        np.asarray(positions, dtype=np.int64)[order],
        np.asarray(periods, dtype=np.float64)[order],
        np.asarray(flags, dtype=bool)[order],
    )


def overlap_add(
    x: np.ndarray,
    marks: PitchMarks,
    out_len: int,
    to_input: Callable[[float], float],
    step: Callable[[float, int], float],
    to_output: Callable[[float], float] | None = None,
) -> np.ndarray:
    """Generic PSOLA synthesis.

    ``to_input(t)`` maps an output sample position to an input position; the grain of the
    nearest analysis mark (Hann window of two local periods) is added at ``t``, then ``t``
    advances by ``step(t_in, mark_index)`` samples. ``to_output`` is the inverse map; when
    given, synthesis time snaps to the first epoch of every voiced run so the output stays
    phase-aligned with the input there.
    """
    if len(marks.positions) == 0:
        return np.zeros(out_len)
    max_p = int(np.ceil(marks.periods.max())) + 1
    xp = np.pad(x, (max_p, max_p))
    y = np.zeros(out_len + 2 * max_p)
    wsum = np.zeros_like(y)
    pos = marks.positions
    starts = np.flatnonzero(marks.voiced & ~np.concatenate(([False], marks.voiced[:-1])))
    next_start = 0
    t = 0.0
    while t < out_len:
        t_in = to_input(t)
        k = int(np.searchsorted(pos, t_in))
        if k == len(pos) or (k > 0 and t_in - pos[k - 1] <= pos[k] - t_in):
            k -= 1
        while next_start < len(starts) and starts[next_start] < k:
            next_start += 1
        if to_output is not None and next_start < len(starts) and starts[next_start] in (k, k + 1):
            k = int(starts[next_start])
            t = max(t, to_output(float(pos[k])))
            next_start += 1
            if t >= out_len:
                break
        P = int(round(marks.periods[k]))
        win = np.hanning(2 * P + 3)[1:-1]
        src = pos[k] + max_p
        grain = xp[src - P : src + P + 1] * win
        dst = int(round(t)) + max_p
        y[dst - P : dst + P + 1] += grain
        wsum[dst - P : dst + P + 1] += win
        t += max(1.0, step(t_in, k))
    y = y[max_p : max_p + out_len]
    wsum = wsum[max_p : max_p + out_len]
    return y / np.maximum(wsum, 1.0)


def _splice(x: np.ndarray, y: np.ndarray, regions: Sequence[tuple[int, int]], fade: int) -> np.ndarray:
    """Replace ``x`` by ``y`` inside ``regions`` with short linear crossfades at the edges."""
    out = x.copy()
    for lo, hi in regions:
        if hi <= lo:
            continue
        w = np.ones(hi - lo)
        f = min(fade, (hi - lo) // 2)
        if f > 0:
            ramp = (np.arange(f) + 0.5) / f
            w[:f] = ramp
            w[-f:] = ramp[::-1]
        out[lo:hi] = (1 - w) * x[lo:hi] + w * y[lo:hi]
    return out


def _repitch(wave: Waveform, contour: F0Contour, target_f0: Callable[[np.ndarray], np.ndarray], regions: list[tuple[int, int]]) -> Waveform:
    x = wave.samples
    sr = wave.sample_rate
    if not regions:
        return wave.replace(x.copy())
    marks = find_pitch_marks(wave, contour)
    if not marks.voiced.any():
        return wave.replace(x.copy())

    def step(t_in: float, k: int) -> float:
        if not marks.voiced[k]:
            return marks.periods[k]
        f = float(target_f0(np.array([t_in / sr]))[0])
        return sr / f if np.isfinite(f) and f > 0 else marks.periods[k]

    y = overlap_add(x, marks, len(x), lambda t: t, step, lambda t: t)
    return wave.replace(_splice(x, y, regions, int(round(CROSSFADE_S * sr))))


def _speaker_segments(wave: Waveform, va: Sequence[VaSegment]) -> list[VaSegment]:
    if wave.speaker is None:
        return list(va)
    return [s for s in va if s.speaker == wave.speaker]


def flatten_f0(wave: Waveform, contour: F0Contour, va: Sequence[VaSegment]) -> Waveform:
    """Resynthesize every VA segment at the constant mean voiced F0 of that segment.

    Unvoiced and non-speech samples pass through untouched.
    """
    sr = wave.sample_rate
    voiced = voiced_sample_mask(contour, len(wave), sr)
    targets: list[tuple[float, float, float]] = []
    regions: list[tuple[int, int]] = []
    for seg in _speaker_segments(wave, va):
        vals = contour.voiced_f0(seg.start, seg.end)
        if vals.size == 0:
            log.warning("segment %.3f-%.3f s has no voiced frames; left unchanged", seg.start, seg.end)
            continue
        targets.append((seg.start, seg.end, float(vals.mean())))
        lo, hi = int(round(seg.start * sr)), min(len(wave), int(round(seg.end * sr)))
        seg_mask = np.zeros(len(wave), dtype=bool)
        seg_mask[lo:hi] = voiced[lo:hi]
        regions.extend(_runs(seg_mask))

    def target(t: np.ndarray) -> np.ndarray:
        out = f0_at(contour, t)
        for start, end, mean in targets:
            out = np.where((t >= start) & (t < end), mean, out)
        return out

    return _repitch(wave, contour, target, regions)


def shift_f0(wave: Waveform, contour: F0Contour, factor: float, va: Sequence[VaSegment] | None = None) -> Waveform:
    """Resynthesize voiced speech at ``factor`` times its original F0 (duration preserved).

    With ``va`` given, only voiced samples inside this speaker's segments are modified.
    """
    if not factor > 0:
        raise ValidationError(f"F0 factor must be positive, got {factor}")
    sr = wave.sample_rate
    voiced = voiced_sample_mask(contour, len(wave), sr)
    if va is not None:
        keep = np.zeros(len(wave), dtype=bool)
        for seg in _speaker_segments(wave, va):
            keep[int(round(seg.start * sr)) : int(round(seg.end * sr))] = True
        voiced &= keep
    return _repitch(wave, contour, lambda t: factor * f0_at(contour, t), _runs(voiced))


def duration_map(
    alignment: PhoneAlignment, phone_means: Mapping[str, float], duration: float
) -> tuple[np.ndarray, np.ndarray]:
    """Knots ``(t_in, t_out)`` in seconds of the piecewise-linear time map that gives every
    aligned phone its mean duration and keeps everything between phones unchanged."""
    if len(alignment) == 0:
        raise ValidationError("empty phone alignment")
    missing = sorted({p for p, _, _ in alignment.phones if p not in phone_means})
    if missing:
        raise ValidationError(f"no mean duration for phone(s): {', '.join(missing)}")
    if any(phone_means[p] <= 0 for p, _, _ in alignment.phones):
        raise ValidationError("phone mean durations must be positive")
    knots_in = [0.0]
    knots_out = [0.0]
    for label, start, end in alignment.phones:
        s, e = start, min(end, duration)
        if s > knots_in[-1]:
            knots_out.append(knots_out[-1] + (s - knots_in[-1]))
            knots_in.append(s)
        if e > knots_in[-1]:
            knots_out.append(knots_out[-1] + phone_means[label] * (e - knots_in[-1]) / (e - s))
            knots_in.append(e)
    if duration > knots_in[-1]:
        knots_out.append(knots_out[-1] + (duration - knots_in[-1]))
        knots_in.append(duration)
    return np.asarray(knots_in), np.asarray(knots_out)


def scale_durations(
    wave: Waveform, alignment: PhoneAlignment, phone_means: Mapping[str, float], contour: F0Contour | None = None
) -> Waveform:
    """Time-scale each aligned phone to its mean duration, preserving pitch.

    Stretches outside the aligned phones keep their duration.
    """
    from vapkit.perturb.pitch import estimate_f0

    sr = wave.sample_rate
    ki, ko = duration_map(alignment, phone_means, len(wave) / sr)
    ki, ko = ki * sr, ko * sr
    if contour is None:
        contour = estimate_f0(wave)
    out_len = int(round(ko[-1]))
    marks = find_pitch_marks(wave, contour)
    y = overlap_add(
        wave.samples,
        marks,
        out_len,
        lambda t: float(np.interp(t, ko, ki)),
        lambda t_in, k: marks.periods[k],
        lambda t: float(np.interp(t, ki, ko)),
    )
    return wave.replace(y)
