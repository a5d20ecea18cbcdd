"""Independent reference implementations used only by the tests.

These scan the frame grid directly against the event definitions, one candidate at a
time, and deliberately share no code with ``vapkit.events``.
"""

from __future__ import annotations

import math

import numpy as np

SPK = ("A", "B")


def _frames(seconds, fr):
    return int(round(seconds * fr + 1e-9))


def brute_force_events(frames: np.ndarray, fr: int, min_context: float = 1.0):
    """Return (gaps, backchannels, shift_negative_candidates, bc_negative_candidates).

    gaps: (silence_start, silence_end, prev, next, eval_start, eval_end)
    backchannels: (speaker, start, end, pre_silence, post_silence)
    """
    rows = [bytes(frames[0].astype(np.uint8)), bytes(frames[1].astype(np.uint8))]
    T = len(rows[0])
    state = bytes(rows[0][i] + 2 * rows[1][i] for i in range(T))
    C = max(1, _frames(min_context, fr))
    off = 0
    while (off + 0.5) / fr < 0.05 - 1e-12:
        off += 1
    n_eval = max(1, _frames(0.1, fr))
    L = max(1, _frames(0.5, fr))
    H = _frames(2.0, fr)
    bc_max, bc_pre, bc_post = _frames(1.0, fr), _frames(1.0, fr), _frames(2.0, fr)

    gaps = []
    for s in range(T):
        if state[s] != 0 or (s > 0 and state[s - 1] == 0):
            continue
        e = s
        while e < T and state[e] == 0:
            e += 1
        if s < C or e + C > T or e - s < off + n_eval:
            continue
        for p in (1, 2):
            if state[s - C : s] == bytes([p]) * C:
                for n in (1, 2):
                    if state[e : e + C] == bytes([n]) * C:
                        gaps.append((s, e, SPK[p - 1], SPK[n - 1], s + off, s + off + n_eval))

    bcs = []
    for i in range(2):
        row = rows[i]
        for a in range(T):
            if row[a] != 1 or (a > 0 and row[a - 1] == 1):
                continue
            b = a
            while b < T and row[b] == 1:
                b += 1
            if b - a > bc_max or a < bc_pre or b + bc_post > T:
                continue
            if 1 in row[a - bc_pre : a] or 1 in row[b : b + bc_post]:
                continue
            pre = a
            while pre > 0 and row[pre - 1] == 0:
                pre -= 1
            post = b
            while post < T and row[post] == 0:
                post += 1
            bcs.append((SPK[i], a, b, a - pre, post - b))
    bcs.sort(key=lambda x: (x[1], x[0]))

    def overlaps(w, windows):
        return any(w < hi and lo < w + L for lo, hi in windows)

    shift_windows = [(g[0] - L, g[0]) for g in gaps if g[2] != g[3]]
    hold_windows = [(g[0] - L, g[0]) for g in gaps if g[2] == g[3]]
    bc_windows = [(b[1] - L, b[1]) for b in bcs if b[1] - L >= 0]

    shift_neg, bc_neg = [], []
    for w in range(0, T - L - H + 1):
        for i in range(2):
            o = 1 - i
            if (
                state[w : w + L] == bytes([i + 1]) * L
                and 1 not in rows[o][w : w + L + H]
                and not overlaps(w, shift_windows + hold_windows + bc_windows)
            ):
                shift_neg.append((w, SPK[o]))
            if 1 not in rows[i][w : w + L + H] and not overlaps(w, shift_windows + bc_windows):
                bc_neg.append((w, SPK[i]))
    return gaps, bcs, sorted(shift_neg), sorted(bc_neg)


def random_dialog_frames(rng: np.random.Generator, duration: float, fr: int) -> np.ndarray:
    """A messy two-speaker activity grid: turns, pauses, overlaps and short blips."""
    T = int(math.ceil(duration * fr))
    frames = np.zeros((2, T), dtype=np.uint8)
    t = 0.0
    spk = int(rng.integers(2))
    while t < duration:
        length = rng.choice([rng.uniform(0.1, 1.0), rng.uniform(1.0, 5.0)], p=[0.25, 0.75])
        lo, hi = int(t * fr), min(T, int((t + length) * fr))
        frames[spk, lo:hi] = 1
        t += length
        r = rng.random()
        if r < 0.15:
            t -= rng.uniform(0.05, 0.6)  # overlap into the next unit
        else:
            t += rng.exponential(0.6)
        if rng.random() < 0.4:
            spk = 1 - spk
        t = max(t, 0.0)
    # sparse listener blips
    for _ in range(rng.poisson(duration / 8)):
        s = rng.uniform(0, duration)
        d = rng.uniform(0.1, 1.4)
        frames[int(rng.integers(2)), int(s * fr) : min(T, int((s + d) * fr))] = 1
    return frames
