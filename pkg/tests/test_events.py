import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_force_events, random_dialog_frames
from vapkit.events import (
    GapLabel,
    Polarity,
    backchannel_regions,
    bc_negative_candidates,
    extract_events,
    extract_gaps,
    find_backchannels,
    frame_states,
    read_events_jsonl,
    shift_negative_candidates,
    shift_prediction_regions,
    write_events_jsonl,
)
from vapkit.va import VaGrid, VaSegment, rasterize_va


def grid(segs, duration, fr=50):
    return rasterize_va([VaSegment(*s) for s in segs], fr, duration)


def frame_span(g, lo, hi):
    return (lo + 0.5) / g.frame_rate, (hi - 0.5) / g.frame_rate


class TestGaps:
    def test_hold(self):
        g = grid([("A", 0, 2), ("A", 3, 5)], 5)
        (ev,) = extract_gaps(g)
        assert ev.label is GapLabel.HOLD
        first, last = frame_span(g, ev.eval_start, ev.eval_end)
        assert first >= 2.05 - 1e-9 and last < 2.15
        assert ev.eval_end - ev.eval_start == 5

    @pytest.mark.parametrize("fr", [20, 50, 100])
    def test_eval_window_is_100ms_from_50ms(self, fr):
        g = grid([("A", 0, 2), ("B", 3, 5)], 5, fr)
        (ev,) = extract_gaps(g)
        assert ev.label is GapLabel.SHIFT and ev.prev_speaker == "A" and ev.next_speaker == "B"
        assert ev.eval_end - ev.eval_start == round(0.1 * fr)
        first, _ = frame_span(g, ev.eval_start, ev.eval_end)
        assert 2.05 - 1e-9 <= first < 2.05 + 1 / fr
        assert ev.eval_end <= ev.silence_end

    def test_short_silence_rejected(self):
        g = grid([("A", 0, 2), ("B", 2.12, 5)], 5)
        assert extract_gaps(g) == []
        gaps, *_ = brute_force_events(g.frames, 50)
        assert gaps == []

    def test_just_long_enough(self):
        g = grid([("A", 0, 2), ("B", 2.14, 5)], 5)
        assert len(extract_gaps(g)) == 1

    def test_overlap_bounded_silence_discarded(self):
        g = grid([("A", 0, 2), ("B", 1.5, 1.9), ("B", 3, 5)], 5)
        assert extract_gaps(g) == []

    def test_min_context(self):
        g = grid([("A", 0, 0.8), ("B", 1.5, 4)], 4)
        assert extract_gaps(g) == []
        assert len(extract_gaps(g, min_context=0.5)) == 1


class TestShiftPrediction:
    def test_positive_before_shift(self):
        g = grid([("A", 0, 2), ("B", 3, 6)], 6)
        gaps = extract_gaps(g)
        regions = shift_prediction_regions(g, gaps)
        pos = [r for r in regions if r.polarity is Polarity.POSITIVE]
        assert len(pos) == 1
        assert pos[0].target_speaker == "B"
        assert (pos[0].start, pos[0].end) == (75, 100)  # 1.5 - 2.0 s

    def test_far_window_is_negative_candidate(self):
        g = grid([("A", 0, 10), ("B", 20, 25)], 25)
        cands = shift_negative_candidates(g)
        assert (200, "B") in cands  # 4.0 - 4.5 s
        # window ending less than 2 s before B's onset is not
        assert (int(17.6 * 50), "B") not in cands
        assert all(w + 25 + 100 <= 20 * 50 or spk == "A" for w, spk in cands)

    def test_no_shift_no_regions(self):
        g = grid([("A", 0, 10), ("A", 11, 20)], 20)
        assert shift_prediction_regions(g, extract_gaps(g)) == []

    def test_negatives_are_count_matched(self):
        g = grid([("A", 0, 6), ("B", 7, 14), ("A", 15, 22)], 25)
        regions = shift_prediction_regions(g, extract_gaps(g), rng=1)
        pos = [r for r in regions if r.polarity is Polarity.POSITIVE]
        neg = [r for r in regions if r.polarity is Polarity.NEGATIVE]
        assert len(pos) == 2 and len(neg) == 2

    def test_shortfall_reported(self):
        g = grid([("A", 0, 2), ("B", 2.4, 4.5)], 4.6)
        ev = extract_events(g)
        assert ev.negative_shortfall["shift_pred"] == 1
        assert sum(r.polarity is Polarity.NEGATIVE for r in ev.shift_pred) == 0


class TestBackchannels:
    def test_isolated_short_segment(self):
        g = grid([("A", 0, 10), ("B", 2.0, 2.5), ("B", 5.0, 5.4)], 10)
        bcs, regions = backchannel_regions(g)
        assert [(b.speaker, b.start, b.end) for b in bcs] == [("B", 100, 125), ("B", 250, 270)]
        pos = [r for r in regions if r.polarity is Polarity.POSITIVE]
        assert (pos[1].start, pos[1].end) == (225, 250)  # 4.5 - 5.0 s

    def test_single_bc_with_required_silences(self):
        g = grid([("A", 0, 10), ("B", 5.0, 5.4)], 10)
        bcs, regions = backchannel_regions(g)
        assert len(bcs) == 1 and bcs[0].pre_silence >= 50 and bcs[0].post_silence >= 100
        assert [(r.start, r.end) for r in regions if r.polarity is Polarity.POSITIVE] == [(225, 250)]

    def test_too_long(self):
        g = grid([("A", 0, 10), ("B", 5.0, 6.2)], 10)
        assert find_backchannels(g) == []

    def test_close_pair_neither_qualifies(self):
        g = grid([("A", 0, 10), ("B", 5.0, 5.3), ("B", 5.8, 6.1)], 10)
        assert find_backchannels(g) == []
        _, bcs, _, _ = brute_force_events(g.frames, 50)
        assert bcs == []

    def test_negatives_may_be_in_silence(self):
        g = grid([("A", 0, 10), ("B", 5.0, 5.4), ("A", 14, 20)], 20)
        cands = bc_negative_candidates(g)
        state = frame_states(g)
        assert any(np.all(state[w : w + 25] == 0) for w, _ in cands)


def _signature(events):
    return (
        [(g.silence_start, g.silence_end, g.prev_speaker, g.next_speaker, g.eval_start, g.eval_end) for g in events.gaps],
        [(b.speaker, b.start, b.end, b.pre_silence, b.post_silence) for b in events.backchannels],
    )


class TestOracleAndInvariants:
    @pytest.mark.parametrize("seed", range(12))
    def test_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        fr = [20, 50, 100][seed % 3]
        frames = random_dialog_frames(rng, 45.0, fr)
        g = VaGrid(fr, frames)
        ref_gaps, ref_bcs, ref_shift_neg, ref_bc_neg = brute_force_events(frames, fr)
        ev = extract_events(g, rng=seed)
        assert _signature(ev) == (ref_gaps, ref_bcs)
        assert shift_negative_candidates(g) == ref_shift_neg
        assert bc_negative_candidates(g) == ref_bc_neg

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_region_invariants(self, seed):
        rng = np.random.default_rng(seed)
        g = VaGrid(50, random_dialog_frames(rng, 40.0, 50))
        ev = extract_events(g, rng=seed)
        state = frame_states(g)
        positives = [(r.start, r.end) for r in ev.shift_pred + ev.bc_pred if r.polarity is Polarity.POSITIVE]
        for gap in ev.gaps:
            assert 0 <= gap.eval_start < gap.eval_end <= gap.silence_end <= g.n_frames
        for r in ev.shift_pred + ev.bc_pred:
            assert 0 <= r.start and r.end <= g.n_frames and r.end - r.start == 25
            if r.polarity is Polarity.NEGATIVE:
                assert not any(r.start < hi and lo < r.end for lo, hi in positives)
        for r in ev.shift_pred:
            if r.polarity is Polarity.POSITIVE:
                prev = "AB".index(r.target_speaker)
                assert np.all(state[r.start : r.end] == (1 - prev) + 1)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_speaker_swap_symmetry(self, seed):
        rng = np.random.default_rng(seed)
        g = VaGrid(50, random_dialog_frames(rng, 40.0, 50))
        ev = extract_events(g)
        sw = extract_events(g.swapped())
        assert _signature(sw) == _signature(ev.swapped()) or (
            sorted(_signature(sw)[0]) == sorted(_signature(ev.swapped())[0])
            and sorted(_signature(sw)[1]) == sorted(_signature(ev.swapped())[1])
        )
        assert len(sw.shift_pred) == len(ev.shift_pred) and len(sw.bc_pred) == len(ev.bc_pred)
        assert sorted((c[0], "AB"["BA".index(c[1])]) for c in shift_negative_candidates(g.swapped())) == shift_negative_candidates(g)

    def test_seeded_sampling_is_reproducible(self):
        g = VaGrid(50, random_dialog_frames(np.random.default_rng(5), 60.0, 50))
        a, b = extract_events(g, rng=11), extract_events(g, rng=11)
        assert a.shift_pred == b.shift_pred and a.bc_pred == b.bc_pred


def test_jsonl_round_trip(tmp_path):
    g = VaGrid(50, random_dialog_frames(np.random.default_rng(2), 60.0, 50))
    ev = extract_events(g)
    write_events_jsonl(ev, tmp_path / "ev.jsonl")
    back = read_events_jsonl(tmp_path / "ev.jsonl", n_frames=g.n_frames)
    assert back.gaps == ev.gaps and back.shift_pred == ev.shift_pred and back.bc_pred == ev.bc_pred
    assert [(b.speaker, b.start, b.end) for b in back.backchannels] == [(b.speaker, b.start, b.end) for b in ev.backchannels]
