"""Spectral and level perturbations: down/up-sampling low-pass and intensity flattening."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.signal import firwin, resample_poly

from vapkit.errors import ValidationError
from vapkit.perturb.audio import Waveform
from vapkit.va import VaSegment

log = logging.getLogger(__name__)

INTENSITY_FRAME_S = 0.01
GAIN_CLAMP_DB = 20.0


def _anti_alias(up: int, down: int, sample_rate: int, cutoff: float) -> np.ndarray:
    """Interpolation filter for ``resample_poly`` with its passband edge a little
    below ``cutoff`` so the band above 1.25x cutoff is fully in the stopband
    (``resample_poly`` applies the ``up`` gain itself)."""
    taps = 48 * max(up, down) + 1
    return firwin(taps, 0.95 * cutoff, width=0.25 * cutoff, fs=sample_rate * up)


def low_pass(wave: Waveform, cutoff: float = 400.0) -> Waveform:
    """Remove content above ``cutoff`` by resampling down to ``2 * cutoff`` and back."""
    sr = wave.sample_rate
    if not 0 < cutoff < sr / 2:
        raise ValidationError(f"cutoff must lie in (0, {sr / 2}) Hz, got {cutoff}")
    target = int(round(2 * cutoff))
    g = np.gcd(sr, target)
    up, down = target // g, sr // g
    x = wave.samples
    if len(x) == 0:
        return wave.replace(x.copy())
    low = resample_poly(x, up, down, window=_anti_alias(up, down, sr, cutoff))
    back = resample_poly(low, down, up, window=_anti_alias(down, up, target, cutoff))
    out = np.zeros(len(x))
    n = min(len(x), len(back))
    out[:n] = back[:n]
    return wave.replace(out)


@dataclass(frozen=True)
class IntensityResult:
    wave: Waveform
    target_rms: float
    clamped_frames: int
    zero_energy_frames: int


def _speech_mask(wave: Waveform, va: Sequence[VaSegment]) -> np.ndarray:
    mask = np.zeros(len(wave), dtype=bool)
    sr = wave.sample_rate
    for seg in va:
        if wave.speaker is not None and seg.speaker != wave.speaker:
            continue
        mask[int(round(seg.start * sr)) : int(round(seg.end * sr))] = True
    return mask


def frame_rms(x: np.ndarray, frame: int) -> np.ndarray:
    n = len(x) // frame
    return np.sqrt(np.mean(x[: n * frame].reshape(n, frame) ** 2, axis=1)) if n else np.zeros(0)


def flatten_intensity_detailed(
    wave: Waveform, va: Sequence[VaSegment], clamp_db: float = GAIN_CLAMP_DB
) -> IntensityResult:
    """Like :func:`flatten_intensity`, also returning the target level and clamp counts."""
    sr = wave.sample_rate
    x = wave.samples
    hop = max(1, int(round(INTENSITY_FRAME_S * sr)))
    speech = _speech_mask(wave, va)
    n_frames = -(-len(x) // hop)
    if n_frames == 0 or not speech.any():
        return IntensityResult(wave.replace(x.copy()), 0.0, 0, 0)
    pad = n_frames * hop - len(x)
    xf = np.pad(x, (0, pad)).reshape(n_frames, hop)
    sf = np.pad(speech, (0, pad)).reshape(n_frames, hop)
    speech_frame = sf.mean(axis=1) >= 0.5
    rms = np.sqrt(np.mean(xf**2, axis=1))
    target = float(rms[speech_frame].mean()) if speech_frame.any() else 0.0
    lo, hi = 10 ** (-clamp_db / 20), 10 ** (clamp_db / 20)
    zero = speech_frame & (rms <= 0)
    with np.errstate(divide="ignore"):
        raw = np.where(rms > 0, target / np.where(rms > 0, rms, 1.0), hi)
    gains = np.clip(raw, lo, hi)
    clamped = int(np.sum(speech_frame & ((raw < lo) | (raw > hi) | zero)))
    if zero.any():
        log.warning("%d zero-energy speech frame(s); gain clamped to %+.0f dB", int(zero.sum()), clamp_db)
    centers = (np.arange(n_frames) + 0.5) * hop
    idx = np.flatnonzero(speech_frame)
    g = np.interp(np.arange(len(x)), centers[idx], gains[idx])
    g = np.where(speech, g, 1.0)
    return IntensityResult(wave.replace(x * g), target, clamped, int(zero.sum()))


def flatten_intensity(wave: Waveform, va: Sequence[VaSegment], clamp_db: float = GAIN_CLAMP_DB) -> Waveform:
    """Scale speech so each 10 ms frame approaches the speaker's mean speech-frame RMS.

    Gains are interpolated between frame centres, clamped to +-``clamp_db`` and applied
    only to samples inside the speaker's VA segments.
    """
    return flatten_intensity_detailed(wave, va, clamp_db).wave
