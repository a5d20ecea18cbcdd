"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Criteria 7-9 share one model trained on 200 synthetic dialogs and evaluated on held-out
seeds through the full manifest pipeline.
"""

from __future__ import annotations

import math
import time

import numpy as np
import pytest
import torch
from conftest import record_criterion
from oracles import brute_force_events, random_dialog_frames
from sklearn.metrics import f1_score

from vapkit.events import bc_negative_candidates, extract_events, shift_negative_candidates
from vapkit.harness.pipeline import export_inputs, export_scp_items, run_pipeline, write_manifest
from vapkit.harness.scp import ScpSynthSpec, synthetic_scp_items
from vapkit.harness.synth import SynthDialogSpec, generate_corpus
from vapkit.model.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from vapkit.model.config import ModelConfig, TrainConfig
from vapkit.model.features import DialogInputs, frame_features
from vapkit.model.network import VapModel, vap_loss
from vapkit.model.train import split_dataset, train
from vapkit.perturb.audio import Waveform
from vapkit.perturb.filters import flatten_intensity, frame_rms, low_pass
from vapkit.perturb.pitch import estimate_f0
from vapkit.perturb.psola import flatten_f0, shift_f0
from vapkit.va import DEFAULT_BINS, VaGrid, VaSegment, decode_class, encode_projection
from vapkit.zeroshot import bc_prediction_prob, majority_baseline, next_speaker_prob, weighted_f1_from_confusion

pytestmark = pytest.mark.acceptance

SR = 16000


# -- 1. codec ---------------------------------------------------------------------


def test_criterion_1_codec():
    start = time.perf_counter()
    fr = 50
    edges = DEFAULT_BINS.frame_edges(fr)
    failures = 0
    for c in range(256):
        lab = decode_class(c)
        frames = np.zeros((2, edges[-1] + 1), dtype=np.uint8)
        for s in range(2):
            for k in range(4):
                if lab.bits[4 * s + k]:
                    frames[s, 1 + edges[k] : 1 + edges[k + 1]] = 1
        failures += encode_projection(VaGrid(fr, frames), 0).class_index != c
    # exactly half of the first bin active is not "more than half"
    half = np.zeros((2, edges[-1] + 1), dtype=np.uint8)
    half[0, 1 : 1 + edges[1] // 2] = 1
    half_bit = encode_projection(VaGrid(fr, half), 0).bits[0]
    elapsed = time.perf_counter() - start
    ok = failures == 0 and half_bit == 0 and elapsed < 1.0
    record_criterion(1, "codec round-trip", ok, f"{256 - failures}/256 classes, half-active bit={half_bit}, {elapsed:.2f}s")
    assert ok


# -- 2. events oracle -------------------------------------------------------------


def test_criterion_2_events_oracle():
    start = time.perf_counter()
    mismatches = []
    for seed in range(1000):
        rng = np.random.default_rng(seed)
        fr = (20, 50, 100)[seed % 3]
        frames = random_dialog_frames(rng, 60.0, fr)
        grid = VaGrid(fr, frames)
        ref_gaps, ref_bcs, ref_shift_neg, ref_bc_neg = brute_force_events(frames, fr)
        ev = extract_events(grid, rng=seed)
        gaps = [(g.silence_start, g.silence_end, g.prev_speaker, g.next_speaker, g.eval_start, g.eval_end) for g in ev.gaps]
        bcs = [(b.speaker, b.start, b.end, b.pre_silence, b.post_silence) for b in ev.backchannels]
        same = (
            gaps == ref_gaps
            and bcs == ref_bcs
            and shift_negative_candidates(grid) == ref_shift_neg
            and bc_negative_candidates(grid) == ref_bc_neg
        )
        if not same:
            mismatches.append(seed)
    elapsed = time.perf_counter() - start
    ok = not mismatches and elapsed < 120
    record_criterion(2, "events oracle", ok, f"{1000 - len(mismatches)}/1000 grids identical, {elapsed:.1f}s")
    assert ok, mismatches[:10]


# -- 3. zero-shot algebra ---------------------------------------------------------


def _enumerate(dist):
    ev = [0.0, 0.0]
    bc = [0.0, 0.0]
    for c in range(256):
        b = decode_class(c).bits
        a_on, b_on = b[2] and b[3], b[6] and b[7]
        a_off, b_off = not (b[2] or b[3]), not (b[6] or b[7])
        ev[0] += dist[c] * (a_on and b_off)
        ev[1] += dist[c] * (b_on and a_off)
        bc[0] += dist[c] * ((b[0] or b[1]) and a_off)
        bc[1] += dist[c] * ((b[4] or b[5]) and b_off)
    tot = sum(ev)
    return ((0.5, 0.5) if tot == 0 else (ev[0] / tot, ev[1] / tot)), bc


def test_criterion_3_zero_shot_algebra():
    rng = np.random.default_rng(0)
    worst = 0.0
    for k in range(300):
        dist = np.eye(256)[k] if k < 256 else rng.dirichlet(np.full(256, 0.3))
        (pa, pb), bc = _enumerate(dist)
        got = next_speaker_prob(dist)
        worst = max(worst, abs(got[0] - pa), abs(got[1] - pb))
        worst = max(worst, abs(bc_prediction_prob(dist, "A") - bc[0]), abs(bc_prediction_prob(dist, "B") - bc[1]))
    symmetric = next_speaker_prob(np.full(256, 1 / 256))
    point = next_speaker_prob(np.eye(256)[240])
    ok = worst < 1e-12 and symmetric == (0.5, 0.5) and point == (1.0, 0.0)
    record_criterion(3, "zero-shot algebra", ok, f"max deviation {worst:.1e}, symmetric {symmetric}, point mass {point}")
    assert ok


# -- 4. evaluation constants ------------------------------------------------------


def test_criterion_4_evaluation_constants():
    balanced = majority_baseline(500, 500)
    n_hold, n_shift = 770, 230
    skewed = majority_baseline(n_shift, n_hold)
    closed_form = 0.77 * (2 * 0.77 / (1 + 0.77))  # F1 of the majority class, weighted by its support
    y_true = np.r_[np.zeros(n_hold), np.ones(n_shift)]
    reference = f1_score(y_true, np.zeros_like(y_true), average="weighted", zero_division=0)
    from_matrix = weighted_f1_from_confusion(0, 0, n_shift, n_hold)
    ok = abs(balanced - 0.333) <= 0.01 and abs(skewed - reference) < 1e-12 and abs(skewed - closed_form) < 1e-12
    ok = ok and skewed == from_matrix
    record_criterion(
        4, "evaluation constants", ok,
        f"balanced {balanced:.4f}; 77/23 split {skewed:.4f} (sklearn {reference:.4f}, closed form {closed_form:.4f})",
    )
    assert ok


# -- 5. DSP contracts -------------------------------------------------------------


def _voice(f0, amp=0.3):
    phase = 2 * np.pi * np.cumsum(f0) / SR
    return amp * sum(np.sin(k * phase) / k for k in range(1, 8))


def _tone_db(x, freq):
    core = x[4000:-4000]
    spec = np.abs(np.fft.rfft(core * np.hanning(len(core))))
    return 20 * np.log10(spec[np.argmin(np.abs(np.fft.rfftfreq(len(core), 1 / SR) - freq))] + 1e-300)


def test_criterion_5_dsp_contracts():
    t = np.arange(60 * SR) / SR
    va = [VaSegment("A", 4 * k + 0.5, 4 * k + 3.0) for k in range(15)]
    in_speech = np.zeros(len(t), dtype=bool)
    for s in va:
        in_speech[int(s.start * SR) : int(s.end * SR)] = True
    # gliding F0 inside each segment and a different loudness per segment
    f0 = 120 + 80 * ((t % 4) / 4)
    level = np.repeat(np.random.default_rng(0).uniform(0.05, 0.4, 15), 4 * SR)
    x = _voice(f0, 1.0) * level * in_speech
    wave = Waveform(x, SR, "A")
    start = time.perf_counter()
    contour = estimate_f0(wave)
    flat = flatten_f0(wave, contour, va)
    shifted = shift_f0(wave, contour, 0.9, va)
    flat_contour = estimate_f0(flat)
    shifted_contour = estimate_f0(shifted)
    stds = [flat_contour.voiced_f0(s.start + 0.05, s.end - 0.05).std() for s in va]
    both = contour.voiced & shifted_contour.voiced
    ratio = float(np.median(shifted_contour.f0[both] / contour.f0[both]))
    tones = sum(np.sin(2 * np.pi * f * t[: 4 * SR]) for f in (100, 1000)) * 0.3
    lp = low_pass(Waveform(tones, SR), 400.0).samples
    pass_db = _tone_db(lp, 100) - _tone_db(tones, 100)
    stop_db = _tone_db(tones, 1000) - _tone_db(lp, 1000)
    leveled = flatten_intensity(wave, va).samples
    frame = int(0.01 * SR)
    speech_frames = np.add.reduceat(in_speech, np.arange(0, len(t), frame)) == frame
    before = frame_rms(x, frame)[speech_frames[: len(frame_rms(x, frame))]]
    after = frame_rms(leveled, frame)[speech_frames[: len(frame_rms(leveled, frame))]]
    reduction = 1 - after.std() / before.std()
    elapsed = time.perf_counter() - start
    ok = (
        max(stds) < 5.0
        and abs(ratio - 0.9) <= 0.03
        and abs(pass_db) <= 1.0
        and stop_db >= 40.0
        and reduction >= 0.8
        and elapsed < 60
    )
    record_criterion(
        5, "DSP contracts", ok,
        f"flat F0 std max {max(stds):.2f} Hz, shift ratio {ratio:.3f}, 100 Hz {pass_db:+.2f} dB, "
        f"1 kHz -{stop_db:.0f} dB, RMS std -{100 * reduction:.0f}%, {elapsed:.1f}s on 60 s",
    )
    assert ok


# -- 6. model numerics ------------------------------------------------------------


def test_criterion_6_model_numerics(tmp_path):
    labels = torch.randint(0, 256, (2, 40), generator=torch.Generator().manual_seed(0))
    uniform = abs(vap_loss(torch.zeros(2, 40, 256, dtype=torch.float64), labels).item() - math.log(256))

    torch.manual_seed(0)
    cfg = ModelConfig(layers=2, heads=2, dim=16, dropout=0.0, cue_channels=("pitch",))
    model = VapModel(cfg).double()
    g = torch.Generator().manual_seed(1)
    vf = (torch.rand(1, 12, 2, generator=g) > 0.5).double()
    vh = torch.rand(1, 12, 5, generator=g).double()
    sp = torch.randn(1, 12, 2, generator=g).double()
    y = torch.randint(0, 256, (1, 12), generator=g)
    vap_loss(model(vf, vh, sp), y).backward()
    rng = np.random.default_rng(0)
    worst_grad = 0.0
    for p in model.parameters():
        flat = p.data.view(-1)
        idx = rng.choice(flat.numel(), size=min(6, flat.numel()), replace=False)
        analytic = p.grad.view(-1)[idx].numpy()
        numeric = []
        for i in idx:
            orig = flat[i].item()
            with torch.no_grad():
                flat[i] = orig + 1e-4
                up = vap_loss(model(vf, vh, sp), y).item()
                flat[i] = orig - 1e-4
                down = vap_loss(model(vf, vh, sp), y).item()
                flat[i] = orig
            numeric.append((up - down) / 2e-4)
        scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-8)
        worst_grad = max(worst_grad, float(np.linalg.norm(analytic - np.array(numeric)) / scale))

    m32 = VapModel(cfg).eval()
    vf, vh, sp = vf.float(), vh.float(), sp.float()
    base = m32(vf, vh, sp)
    causal = True
    for t in range(12):
        vf2, vh2, sp2 = vf.clone(), vh.clone(), sp.clone()
        vf2[:, t + 1 :] = 1 - vf2[:, t + 1 :]
        vh2[:, t + 1 :] += 1.0
        sp2[:, t + 1 :] -= 3.0
        causal &= torch.equal(m32(vf2, vh2, sp2)[:, : t + 1], base[:, : t + 1])

    save_checkpoint(Checkpoint.from_model(m32), tmp_path / "m.safetensors")
    restored = load_checkpoint(tmp_path / "m.safetensors").build()
    round_trip = torch.equal(restored(vf, vh, sp), base)

    ok = uniform <= 1e-6 and worst_grad < 1e-3 and causal and round_trip
    record_criterion(
        6, "model numerics", ok,
        f"|loss - ln 256| {uniform:.1e}, gradient rel. err {worst_grad:.1e}, causal {causal}, checkpoint {round_trip}",
    )
    assert ok


# -- 7-9. desk-scale learning, perturbation direction, completion-point regions ---

MODEL = ModelConfig(frame_rate=50, layers=2, heads=4, dim=64, dropout=0.1, cue_channels=("pitch", "intensity"))
TRAINING = TrainConfig(lr=1e-3, max_epochs=200, max_seconds=600, seed=0)
TIME_LIMIT_S = 30 * 60


@pytest.fixture(scope="session")
def trained(tmp_path_factory):
    """Train on 200 dialogs (seed 0); evaluate 40 held-out dialogs and the phrase pairs."""
    root = tmp_path_factory.mktemp("desk")
    start = time.perf_counter()
    corpus = generate_corpus(SynthDialogSpec(frame_rate=50, seed=0), 200)
    feats = [frame_features(DialogInputs(d.grid, d.cues), MODEL) for d in corpus]
    tr, va = split_dataset(feats, TRAINING.val_fraction, TRAINING.seed)
    result = train(tr, va, MODEL, TRAINING)
    seconds = time.perf_counter() - start
    ckpt = root / "model.safetensors"
    save_checkpoint(result.checkpoint, ckpt)

    held_out = generate_corpus(SynthDialogSpec(frame_rate=50, seed=12345), 40)
    data = root / "data"
    entries = [export_inputs(DialogInputs(d.grid, d.cues, name=f"test{i:03d}"), data) for i, d in enumerate(held_out)]
    manifest = write_manifest(entries, data / "manifest.json")
    report = run_pipeline(manifest, ckpt, ["ablate:pitch", "shift:pitch"], seed=0, out_dir=root / "report")
    phrases = export_scp_items(synthetic_scp_items(ScpSynthSpec(frame_rate=50, seed=7)), root / "phrases")
    scp_report = run_pipeline(phrases, ckpt, seed=0, out_dir=root / "scp")
    return {"seconds": seconds, "result": result, "report": report, "scp": scp_report}


def test_criterion_7_desk_scale_learning(trained):
    rep = trained["report"].reports["original"]["shift_hold"]
    margin = rep.weighted_f1 - rep.baseline_weighted_f1
    ok = margin >= 0.10 and trained["seconds"] < TIME_LIMIT_S
    res = trained["result"]
    record_criterion(
        7, "desk-scale learning", ok,
        f"Shift/Hold weighted F1 {rep.weighted_f1:.3f} vs majority {rep.baseline_weighted_f1:.3f} "
        f"(margin {margin:+.3f}, {rep.n_events} events); trained {trained['seconds'] / 60:.1f} min, "
        f"best epoch {res.best_epoch}/{res.stopped_epoch}",
    )
    assert ok


def test_criterion_8_directional_perturbation(trained):
    reps = trained["report"].reports
    orig = reps["original"]["shift_pred"].weighted_f1
    names = trained["report"].perturbations
    ablated = reps["ablate:pitch"]["shift_pred"].weighted_f1
    noop = reps[next(n for n in names if n.startswith("shift:pitch"))]["shift_pred"].weighted_f1
    ok = orig - ablated >= 0.05 and abs(noop - orig) < 0.02
    record_criterion(
        8, "directional perturbation", ok,
        f"Shift-prediction F1 original {orig:.3f}, pitch ablated {ablated:.3f} (drop {orig - ablated:.3f}), "
        f"no-op shift {noop:.3f} (change {abs(noop - orig):.3f})",
    )
    assert ok


def test_criterion_9_completion_point_regions(trained):
    summary = trained["scp"].scp_summary()["original"]
    short, long = summary["short"], summary["long"]
    rise = short["reactive"] - short["hold"]
    ok = rise >= 0.3 and max(long.values()) < 0.5
    record_criterion(
        9, "completion-point regions", ok,
        "short hold/pred/react " + "/".join(f"{short[k]:.2f}" for k in ("hold", "predictive", "reactive"))
        + f" (reactive - hold {rise:+.2f}); long " + "/".join(f"{long[k]:.2f}" for k in ("hold", "predictive", "reactive")),
    )
    assert ok
