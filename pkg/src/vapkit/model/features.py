"""Per-dialog model inputs: VA features, cue channels, log-mel and external embeddings."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from vapkit.errors import ValidationError
from vapkit.model.config import FEATURE_RATE, Frontend, ModelConfig
from vapkit.va import BinConfig, VaGrid, projection_labels, va_history_track

MEL_WINDOW_S = 0.025


def hz_to_mel(f: np.ndarray | float) -> np.ndarray:
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m: np.ndarray | float) -> np.ndarray:
    return 700.0 * (10 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int, n_fft: int, sample_rate: int, f_min: float = 0.0, f_max: float | None = None) -> np.ndarray:
    """Triangular filters on the mel scale, shape ``(n_mels, n_fft // 2 + 1)``."""
    f_max = sample_rate / 2 if f_max is None else f_max
    edges = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2))
    freqs = np.fft.rfftfreq(n_fft, 1 / sample_rate)
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (freqs[None, :] - lo) / (mid - lo)
    down = (hi - freqs[None, :]) / (hi - mid)
    return np.maximum(0.0, np.minimum(up, down))


def log_mel(audio: np.ndarray, sample_rate: int = 16000, n_mels: int = 80) -> np.ndarray:
    """Causal log-mel spectrogram at 100 Hz, shape ``(len(audio) // hop, n_mels)``.

    Frame ``t`` analyses the window ending at sample ``(t + 1) * hop``, so it never sees
    audio from later frames.
    """
    hop = sample_rate // FEATURE_RATE
    win = int(round(MEL_WINDOW_S * sample_rate))
    n_fft = 1 << int(np.ceil(np.log2(win)))
    n = len(audio) // hop
    if n == 0:
        return np.zeros((0, n_mels), dtype=np.float32)
    padded = np.concatenate([np.zeros(win - hop), np.asarray(audio, dtype=np.float64)])
    idx = np.arange(n)[:, None] * hop + np.arange(win)[None, :]
    spec = np.abs(np.fft.rfft(padded[idx] * np.hanning(win), n_fft)) ** 2
    mel = spec @ mel_filterbank(n_mels, n_fft, sample_rate).T
    return np.log(mel + 1e-6).astype(np.float32)


@dataclass
class DialogInputs:
    """Everything the model consumes for one dialog; ``grid`` is at the model frame rate."""

    grid: VaGrid
    cues: dict[str, np.ndarray] = field(default_factory=dict)  # name -> (2, T)
    audio: np.ndarray | None = None  # mono, model sample rate
    embeddings: np.ndarray | None = None  # (T_100Hz, embedding_dim)
    name: str = ""


@dataclass
class FeatureArrays:
    """Frame-aligned arrays; ``speech`` is at the model rate (cues) or 100 Hz."""

    vf: np.ndarray  # (T, 2)
    vh: np.ndarray  # (T, 5)
    speech: np.ndarray | None  # (T * k, F)
    labels: np.ndarray  # (T,), -100 where no full future window exists

    @property
    def n_frames(self) -> int:
        return len(self.vf)


def _fit_rate(x: np.ndarray, n: int, stride: int, what: str) -> np.ndarray:
    if abs(len(x) - n) > stride:
        raise ValidationError(f"{what} has {len(x)} frames at {FEATURE_RATE} Hz, expected {n}")
    if len(x) >= n:
        return x[:n]
    return np.concatenate([x, np.repeat(x[-1:], n - len(x), axis=0)]) if len(x) else np.zeros((n, x.shape[1]), x.dtype)


def cue_matrix(cues: dict[str, np.ndarray], names: tuple[str, ...], n_frames: int) -> np.ndarray:
    """Stack the named cue tracks into ``(T, 2 * len(names))`` (A then B per cue)."""
    cols = []
    for name in names:
        if name not in cues:
            raise ValidationError(f"missing cue channel {name!r}; have {sorted(cues)}")
        track = np.asarray(cues[name], dtype=np.float32)
        if track.shape != (2, n_frames):
            raise ValidationError(f"cue {name!r} has shape {track.shape}, expected (2, {n_frames})")
        cols.append(track.T)
    return np.concatenate(cols, axis=1) if cols else np.zeros((n_frames, 0), np.float32)


def frame_features(inputs: DialogInputs, config: ModelConfig) -> FeatureArrays:
    grid = inputs.grid
    if grid.frame_rate != config.frame_rate:
        raise ValidationError(f"VA grid is at {grid.frame_rate} Hz but the model runs at {config.frame_rate} Hz")
    T = grid.n_frames
    vf = grid.frames.T.astype(np.float32)
    vh = va_history_track(grid).astype(np.float32)
    labels = projection_labels(grid, BinConfig(config.bin_durations)).astype(np.int64)
    speech: np.ndarray | None = None
    if config.frontend is Frontend.VA_ONLY:
        if config.cue_channels:
            speech = cue_matrix(inputs.cues, config.cue_channels, T)
    elif config.frontend is Frontend.LOG_MEL:
        if inputs.audio is None:
            raise ValidationError(f"log_mel frontend needs audio for dialog {inputs.name!r}")
        mel = log_mel(inputs.audio, config.sample_rate, config.n_mels)
        speech = _fit_rate(mel, T * config.stride, config.stride, "log-mel")
    else:
        emb = inputs.embeddings
        if emb is None or emb.ndim != 2 or emb.shape[1] != config.embedding_dim:
            shape = None if emb is None else emb.shape
            raise ValidationError(f"external embeddings must be (T, {config.embedding_dim}), got {shape}")
        speech = _fit_rate(emb.astype(np.float32), T * config.stride, config.stride, "embedding track")
    if speech is not None and not np.all(np.isfinite(speech)):
        raise ValidationError(f"non-finite speech features in dialog {inputs.name!r}")
    return FeatureArrays(vf, vh, speech, labels)
