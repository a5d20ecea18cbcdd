"""Short/long phrase pairs around a syntactic completion point (SCP).

A short phrase ends at the SCP; its long counterpart continues past it. The region
analysis compares the model's shift probability while the phrase is under way (hold),
just before the SCP (predictive) and on the frame where the SCP word ends (reactive).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from importlib import resources
from typing import Sequence

import numpy as np

from vapkit.errors import ValidationError
from vapkit.harness.synth import Ipu, SynthDialogSpec, cue_tracks
from vapkit.model.features import DialogInputs, frame_features
from vapkit.model.network import VapModel, infer_logits
from vapkit.va import SPEAKERS, VaGrid
from vapkit.zeroshot import DEFAULT_AGGREGATION, AggregationConfig, ProbSequence, scp_regions

VERSIONS = ("short", "long")
REGIONS = ("hold", "predictive", "reactive")


@dataclass(frozen=True)
class PhrasePair:
    id: int
    short: str
    long: str

    def text(self, version: str) -> str:
        if version not in VERSIONS:
            raise ValidationError(f"version must be one of {VERSIONS}, got {version!r}")
        return self.short if version == "short" else self.long

    @property
    def continuation(self) -> str:
        """Words the long version adds after the completion point."""
        return self.long[len(self.short.rstrip("?")) :].strip()


def load_phrases() -> list[PhrasePair]:
    """The bundled phrase pairs (question texts, short and long)."""
    raw = json.loads(resources.files("vapkit.harness").joinpath("data/phrases.json").read_text())
    pairs = [PhrasePair(int(r["id"]), r["short"], r["long"]) for r in raw]
    for p in pairs:
        if not p.long.startswith(p.short.rstrip("?")):
            raise ValidationError(f"phrase pair {p.id}: long version does not extend the short one")
    return pairs


def word_count(text: str) -> int:
    return len(text.replace("?", " ").split())


@dataclass
class ScpItem:
    """One phrase rendering ready for the model.

    Times are in seconds from the start of ``inputs``; ``speaker`` is the one saying the
    phrase, so a shift means the other speaker takes the turn.
    """

    phrase: int
    version: str
    inputs: DialogInputs
    scp_time: float
    word_end: float
    utterance_start: float
    speaker: str = "A"
    name: str = ""


@dataclass(frozen=True)
class ScpSynthSpec:
    """Layout of synthetic phrase renderings.

    The other speaker talks first (a prompt ending in a yielded turn), then after
    ``gap`` the phrase speaker says ``word_dur`` seconds per word. The short version
    carries the dialog generator's yield cue on its final stretch; the long version
    runs level through the completion point and yields at its own end.
    """

    frame_rate: int = 50
    lead_in: float = 0.5
    prompt: float = 3.0
    gap: float = 0.5
    word_dur: float = 0.4
    tail: float = 2.5
    seed: int = 0
    dialog: SynthDialogSpec = field(default_factory=SynthDialogSpec)

    def __post_init__(self) -> None:
        for name in ("prompt", "gap", "word_dur", "tail"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be positive")
        if self.lead_in < 0:
            raise ValidationError("lead_in must be non-negative")


def synthetic_scp_items(spec: ScpSynthSpec = ScpSynthSpec(), pairs: Sequence[PhrasePair] | None = None) -> list[ScpItem]:
    """Short and long renderings of every phrase pair with the dialog generator's cues.

    Both versions of a pair share one noise draw so they differ only in what happens
    at and after the completion point.
    """
    pairs = load_phrases() if pairs is None else list(pairs)
    fr = spec.frame_rate
    dialog = SynthDialogSpec.from_dict({**spec.dialog.to_dict(), "frame_rate": fr})
    seeds = np.random.SeedSequence(spec.seed).spawn(len(pairs))
    items: list[ScpItem] = []
    for pair, ss in zip(pairs, seeds):
        a_start = spec.lead_in + spec.prompt + spec.gap
        scp = a_start + word_count(pair.short) * spec.word_dur
        long_end = a_start + word_count(pair.long) * spec.word_dur
        T = int(round((long_end + spec.tail) * fr))
        b0, b1 = int(round(spec.lead_in * fr)), int(round((spec.lead_in + spec.prompt) * fr))
        a0 = int(round(a_start * fr))
        for version in VERSIONS:
            a1 = int(round((scp if version == "short" else long_end) * fr))
            frames = np.zeros((2, T), dtype=np.uint8)
            frames[1, b0:b1] = 1
            frames[0, a0:a1] = 1
            ipus = [Ipu("B", b0, b1, yielded=True), Ipu("A", a0, a1, yielded=True)]
            cues = cue_tracks(dialog, np.random.default_rng(ss), frames, ipus)
            inputs = DialogInputs(VaGrid(fr, frames), cues, name=f"phrase{pair.id}_{version}")
            items.append(ScpItem(pair.id, version, inputs, scp, scp, a_start, "A", inputs.name))
    return items


@dataclass(frozen=True)
class ScpRow:
    name: str
    phrase: int
    version: str
    hold: float
    predictive: float
    reactive: float

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate_scp(
    model: VapModel, items: Sequence[ScpItem], aggregation: AggregationConfig = DEFAULT_AGGREGATION
) -> list[ScpRow]:
    """Region means of the shift probability for each rendering."""
    rows = []
    for item in items:
        if item.speaker not in SPEAKERS:
            raise ValidationError(f"{item.name}: unknown speaker {item.speaker!r}")
        feats = frame_features(item.inputs, model.config)
        probs = ProbSequence.from_logits(infer_logits(model, feats), model.config.frame_rate)
        r = scp_regions(probs, item.scp_time, item.word_end, item.speaker, aggregation, item.utterance_start)
        rows.append(ScpRow(item.name, item.phrase, item.version, r.hold, r.predictive, r.reactive))
    return rows


def summarize_scp(rows: Sequence[ScpRow]) -> dict[str, dict[str, float]]:
    """Mean of every region per version (versions without rows are omitted)."""
    out: dict[str, dict[str, float]] = {}
    for version in VERSIONS:
        sel = [r for r in rows if r.version == version]
        if sel:
            out[version] = {reg: float(np.mean([getattr(r, reg) for r in sel])) for reg in REGIONS}
    return out

