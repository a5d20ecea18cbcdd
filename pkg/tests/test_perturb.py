import logging
import time

import numpy as np
import pytest

from vapkit.errors import ValidationError
from vapkit.perturb.audio import (
    PhoneAlignment,
    Waveform,
    normalize_peak,
    phone_means_from_alignments,
    read_alignment,
    read_wav,
    write_wav,
)
from vapkit.perturb.filters import flatten_intensity, flatten_intensity_detailed, frame_rms, low_pass
from vapkit.perturb.pitch import F0Contour, estimate_f0, last_syllable_stats
from vapkit.perturb.psola import flatten_f0, scale_durations, shift_f0
from vapkit.va import VaSegment

SR = 16000


def voice(f0, amp=0.3):
    """Harmonic-rich periodic signal following the per-sample F0 track ``f0``."""
    phase = 2 * np.pi * np.cumsum(np.broadcast_to(f0, np.shape(f0))) / SR
    return amp * sum(np.sin(k * phase) / k for k in range(1, 8))


def tone_level_db(x, freq):
    """Level of the FFT bin nearest ``freq`` (edges trimmed, Hann windowed)."""
    core = x[4000:-4000]
    spec = np.abs(np.fft.rfft(core * np.hanning(len(core))))
    freqs = np.fft.rfftfreq(len(core), 1 / SR)
    return 20 * np.log10(spec[np.argmin(np.abs(freqs - freq))] + 1e-300)


def seconds(n):
    return np.arange(int(n * SR)) / SR


class TestEstimator:
    def test_sine(self):
        c = estimate_f0(Waveform(0.5 * np.sin(2 * np.pi * 200 * seconds(1)), SR))
        v = c.voiced_f0()
        assert len(v) >= 0.9 * len(c)
        assert np.all(np.abs(v - 200) <= 2)

    def test_white_noise_unvoiced(self):
        x = np.random.default_rng(0).uniform(-0.5, 0.5, SR)
        c = estimate_f0(Waveform(x, SR))
        assert np.mean(~c.voiced) >= 0.9

    def test_silence(self):
        c = estimate_f0(Waveform(np.zeros(SR), SR))
        assert not c.voiced.any()

    def test_empty(self):
        assert len(estimate_f0(Waveform(np.zeros(0), SR))) == 0

    def test_low_sample_rate_rejected(self):
        with pytest.raises(ValidationError, match="sample rate"):
            estimate_f0(Waveform(np.zeros(100), 1000))

    def test_band_respected(self):
        c = estimate_f0(Waveform(voice(150 + 100 * seconds(1)), SR))
        v = c.voiced_f0()
        assert np.all((v >= c.f0_min) & (v <= c.f0_max))

    def test_contour_validation(self):
        with pytest.raises(ValidationError):
            F0Contour(np.array([0.0, 0.0]), np.array([100.0, 100.0]))

    def test_last_syllable_peak(self):
        t = seconds(1)
        c = estimate_f0(Waveform(voice(np.where(t < 0.8, 150.0, 150.0 * 2 ** (6 / 12))), SR))
        stats = last_syllable_stats(c, 0.82, 1.0)
        assert stats.duration == pytest.approx(0.18)
        assert stats.max_relative_f0 == pytest.approx(6.0, abs=0.3)


class TestFlattenF0:
    def test_glide_is_flattened(self):
        w = Waveform(voice(150 + 50 * seconds(2)), SR, "A")
        out = flatten_f0(w, estimate_f0(w), [VaSegment("A", 0, 2)])
        assert len(out) == len(w) and out.sample_rate == SR
        v = estimate_f0(out).voiced_f0(0.05, 1.95)
        assert v.std() < 5
        assert v.mean() == pytest.approx(200, abs=3)

    def test_unvoiced_input_bit_identical(self):
        x = np.random.default_rng(1).uniform(-0.3, 0.3, SR)
        w = Waveform(x, SR, "A")
        out = flatten_f0(w, estimate_f0(w), [VaSegment("A", 0, 1)])
        assert np.array_equal(out.samples, x)

    def test_segments_keep_their_own_mean(self):
        t = seconds(1)
        x = np.concatenate(
            [voice(120 + 10 * np.sin(2 * np.pi * 2 * t)), np.zeros(SR // 2), voice(180 + 15 * np.sin(2 * np.pi * 2 * t))]
        )
        w = Waveform(x, SR, "A")
        out = estimate_f0(flatten_f0(w, estimate_f0(w), [VaSegment("A", 0, 1), VaSegment("A", 1.5, 2.5)]))
        first, second = out.voiced_f0(0.05, 0.95), out.voiced_f0(1.55, 2.45)
        assert first.mean() == pytest.approx(120, abs=2) and first.std() < 5
        assert second.mean() == pytest.approx(180, abs=2) and second.std() < 5

    def test_unvoiced_stretch_untouched(self):
        noise = np.random.default_rng(2).uniform(-0.1, 0.1, SR // 2)
        x = np.concatenate([voice(150 + 40 * seconds(1)), noise])
        w = Waveform(x, SR, "A")
        out = flatten_f0(w, estimate_f0(w), [VaSegment("A", 0, 1.5)])
        tail = slice(SR + SR // 10, len(x))
        assert np.array_equal(out.samples[tail], x[tail])

    def test_segment_without_voicing_warns(self, caplog):
        x = np.concatenate([voice(np.full(SR, 150.0)), np.zeros(SR)])
        w = Waveform(x, SR, "A")
        with caplog.at_level(logging.WARNING):
            out = flatten_f0(w, estimate_f0(w), [VaSegment("A", 0, 1), VaSegment("A", 1.2, 1.8)])
        assert "no voiced frames" in caplog.text
        assert np.array_equal(out.samples[int(1.2 * SR) :], x[int(1.2 * SR) :])

    def test_other_speaker_segments_ignored(self):
        w = Waveform(voice(150 + 50 * seconds(1)), SR, "A")
        out = flatten_f0(w, estimate_f0(w), [VaSegment("B", 0, 1)])
        assert np.array_equal(out.samples, w.samples)


class TestShiftF0:
    def test_sine_to_180(self):
        w = Waveform(0.5 * np.sin(2 * np.pi * 200 * seconds(1)), SR)
        out = estimate_f0(shift_f0(w, estimate_f0(w), 0.9))
        assert np.median(out.voiced_f0()) == pytest.approx(180, abs=2)

    @pytest.mark.parametrize("factor", [0.9, 1.0, 1.2])
    def test_median_ratio(self, factor):
        w = Waveform(voice(140 + 60 * seconds(2)), SR)
        c = estimate_f0(w)
        out = shift_f0(w, c, factor)
        assert len(out) == len(w)
        ratio = np.median(estimate_f0(out).voiced_f0()) / np.median(c.voiced_f0())
        assert ratio == pytest.approx(factor, abs=0.03)

    def test_half_on_glide_every_frame(self):
        w = Waveform(voice(150 + 50 * seconds(2)), SR)
        c = estimate_f0(w)
        out = estimate_f0(shift_f0(w, c, 0.5))
        both = c.voiced & out.voiced
        both[:5] = both[-5:] = False  # analysis edges
        assert both.sum() > 150
        r = out.f0[both] / c.f0[both]
        assert np.all(np.abs(r - 0.5) <= 0.015)

    def test_invalid_factor(self):
        w = Waveform(voice(np.full(SR, 150.0)), SR)
        with pytest.raises(ValidationError):
            shift_f0(w, estimate_f0(w), 0.0)


class TestLowPass:
    @pytest.mark.parametrize("freq", [100, 200, 320])
    def test_passband(self, freq):
        x = 0.5 * np.sin(2 * np.pi * freq * seconds(2))
        y = low_pass(Waveform(x, SR), 400).samples
        assert abs(tone_level_db(y, freq) - tone_level_db(x, freq)) < 1.0

    @pytest.mark.parametrize("freq", [500, 1000, 3000])
    def test_stopband(self, freq):
        x = 0.5 * np.sin(2 * np.pi * freq * seconds(2))
        y = low_pass(Waveform(x, SR), 400).samples
        assert tone_level_db(y, freq) <= tone_level_db(x, freq) - 40

    def test_length_and_rate(self):
        w = Waveform(np.random.default_rng(0).standard_normal(12345) * 0.1, SR)
        y = low_pass(w)
        assert len(y) == len(w) and y.sample_rate == SR

    def test_silence_stays_zero(self):
        assert np.array_equal(low_pass(Waveform(np.zeros(SR), SR)).samples, np.zeros(SR))

    @pytest.mark.parametrize("cutoff", [0, -5, 8000, 9000])
    def test_invalid_cutoff(self, cutoff):
        with pytest.raises(ValidationError, match="cutoff"):
            low_pass(Waveform(np.zeros(100), SR), cutoff)


class TestFlattenIntensity:
    def test_two_levels_meet_in_middle(self):
        unit = voice(np.full(SR, 150.0), 1.0)
        unit /= np.sqrt(np.mean(unit**2))
        x = np.concatenate([0.1 * unit, 0.2 * unit])
        out = flatten_intensity(Waveform(x, SR, "A"), [VaSegment("A", 0, 2)])
        before, after = frame_rms(x, 160), frame_rms(out.samples, 160)
        assert after[10:90].mean() == pytest.approx(0.15, rel=0.02)
        assert after[110:190].mean() == pytest.approx(0.15, rel=0.02)
        assert after.std() <= 0.2 * before.std()

    def test_constant_level_is_identity(self):
        x = voice(np.full(SR, 150.0))
        out = flatten_intensity(Waveform(x, SR, "A"), [VaSegment("A", 0, 1)])
        assert np.allclose(out.samples, x, rtol=1e-6, atol=1e-9)

    def test_breath_hits_clamp(self):
        rng = np.random.default_rng(0)
        x = np.concatenate([voice(np.full(SR, 150.0)), 1e-4 * rng.standard_normal(SR // 4), voice(np.full(SR, 150.0))])
        res = flatten_intensity_detailed(Waveform(x, SR, "A"), [VaSegment("A", 0, 2.25)])
        gain = res.wave.samples[SR + 1000 : SR + 3000] / x[SR + 1000 : SR + 3000]
        assert gain == pytest.approx(10.0)  # +20 dB
        assert res.clamped_frames > 0

    def test_non_speech_untouched(self):
        x = np.concatenate([voice(np.full(SR, 150.0), 0.1), voice(np.full(SR, 150.0), 0.5)])
        out = flatten_intensity(Waveform(x, SR, "A"), [VaSegment("A", 0, 1)])
        assert np.array_equal(out.samples[SR:], x[SR:])

    def test_zero_energy_counted(self, caplog):
        x = np.concatenate([voice(np.full(SR, 150.0)), np.zeros(800)])
        with caplog.at_level(logging.WARNING):
            res = flatten_intensity_detailed(Waveform(x, SR, "A"), [VaSegment("A", 0, 1.05)])
        assert res.zero_energy_frames == 5
        assert "zero-energy" in caplog.text


class TestScaleDurations:
    def test_compress_one_phone(self):
        w = Waveform(voice(np.full(SR, 150.0)), SR)
        al = PhoneAlignment((("a", 0.0, 0.4), ("b", 0.4, 0.6), ("c", 0.6, 1.0)))
        out = scale_durations(w, al, {"a": 0.4, "b": 0.1, "c": 0.4})
        assert out.duration == pytest.approx(0.9, abs=0.025)
        f0 = estimate_f0(out).voiced_f0()
        assert np.median(f0) == pytest.approx(150, rel=0.05)

    def test_already_at_means(self):
        w = Waveform(voice(np.full(SR, 150.0)), SR)
        al = PhoneAlignment((("a", 0.0, 0.5), ("b", 0.5, 1.0)))
        out = scale_durations(w, al, {"a": 0.5, "b": 0.5})
        assert out.duration == pytest.approx(1.0, abs=0.025)

    def test_stretch_keeps_pitch(self):
        w = Waveform(voice(np.full(SR, 150.0)), SR)
        al = PhoneAlignment((("a", 0.0, 0.4), ("b", 0.4, 1.0)))
        out = scale_durations(w, al, {"a": 0.8, "b": 0.6})
        assert out.duration == pytest.approx(1.4, abs=0.025)
        assert np.median(estimate_f0(out).voiced_f0()) == pytest.approx(150, rel=0.05)

    def test_missing_phone_named(self):
        w = Waveform(voice(np.full(SR, 150.0)), SR)
        al = PhoneAlignment((("a", 0.0, 0.5), ("zh", 0.5, 1.0)))
        with pytest.raises(ValidationError, match="zh"):
            scale_durations(w, al, {"a": 0.5})

    def test_empty_alignment(self):
        with pytest.raises(ValidationError, match="empty"):
            scale_durations(Waveform(np.zeros(SR), SR), PhoneAlignment(()), {})

    def test_phone_means(self):
        als = [PhoneAlignment((("a", 0, 0.1), ("b", 0.1, 0.4))), PhoneAlignment((("a", 0, 0.3),))]
        assert phone_means_from_alignments(als) == pytest.approx({"a": 0.2, "b": 0.3})

    def test_alignment_validation(self):
        with pytest.raises(ValidationError):
            PhoneAlignment((("a", 0.0, 0.5), ("b", 0.4, 1.0)))


class TestContracts:
    def test_low_pass_after_flatten_stays_flat(self):
        w = Waveform(voice(150 + 50 * seconds(2)), SR, "A")
        flat = flatten_f0(w, estimate_f0(w), [VaSegment("A", 0, 2)])
        v = estimate_f0(low_pass(flat, 400)).voiced_f0(0.05, 1.95)
        assert len(v) > 150 and v.std() < 5

    def test_runtime_on_60s(self):
        rng = np.random.default_rng(0)
        t = seconds(60)
        x = voice(160 + 30 * np.sin(2 * np.pi * 0.3 * t)) * (np.sin(2 * np.pi * 0.25 * t) > 0)
        x = x + 1e-3 * rng.standard_normal(len(x))
        va = [VaSegment("A", 4 * k, 4 * k + 2) for k in range(15)]
        w = Waveform(x, SR, "A")
        start = time.perf_counter()
        c = estimate_f0(w)
        flatten_f0(w, c, va)
        shift_f0(w, c, 0.9)
        low_pass(w)
        flatten_intensity(w, va)
        assert time.perf_counter() - start < 60


class TestAudioIo:
    def test_normalize_peak(self):
        w = normalize_peak(Waveform(np.array([0.1, -0.5, 0.2]), SR))
        assert np.max(np.abs(w.samples)) == pytest.approx(10 ** (-3 / 20))
        z = Waveform(np.zeros(3), SR)
        assert normalize_peak(z) is z

    def test_wav_round_trip(self, tmp_path):
        a = Waveform(0.5 * np.sin(np.arange(1000) / 10), SR, "A")
        b = Waveform(0.25 * np.cos(np.arange(1000) / 7), SR, "B")
        write_wav(tmp_path / "x.wav", [a, b])
        ra, rb = read_wav(tmp_path / "x.wav")
        assert ra.speaker == "A" and rb.speaker == "B"
        assert np.max(np.abs(ra.samples - a.samples)) < 1e-4
        write_wav(tmp_path / "f.wav", a, float_pcm=True)
        (fa,) = read_wav(tmp_path / "f.wav")
        assert np.max(np.abs(fa.samples - a.samples)) < 1e-6

    def test_non_finite_rejected(self):
        with pytest.raises(ValidationError):
            Waveform(np.array([0.0, np.nan]))

    def test_read_alignment(self, tmp_path):
        p = tmp_path / "al.csv"
        p.write_text("phone,start,end\na,0,0.1\nb,0.1,0.3\n")
        assert read_alignment(p).phones == (("a", 0.0, 0.1), ("b", 0.1, 0.3))
