"""Manifest-driven evaluation: perturb inputs, run the model, score events, write a report."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np

from vapkit.errors import StageError, ValidationError, VapError
from vapkit.events import EventConfig, EventSet, events_summary, extract_events
from vapkit.harness.scp import ScpItem, ScpRow, evaluate_scp, summarize_scp
from vapkit.harness.synth import ablate_cue, shift_cue
from vapkit.model.checkpoint import checkpoint_id, load_checkpoint
from vapkit.model.config import Frontend, ModelConfig
from vapkit.model.features import DialogInputs, frame_features
from vapkit.model.network import VapModel, infer_logits
from vapkit.perturb.audio import (
    PhoneAlignment,
    Waveform,
    mix_to_mono,
    phone_means_from_alignments,
    read_alignment,
    read_wav,
    resample,
)
from vapkit.perturb.filters import flatten_intensity, low_pass
from vapkit.perturb.pitch import estimate_f0
from vapkit.perturb.psola import duration_map, flatten_f0, scale_durations, shift_f0
from vapkit.va import SPEAKERS, VaSegment, load_va_annotations, rasterize_va
from vapkit.zeroshot import DEFAULT_AGGREGATION, METRICS, AggregationConfig, EvalReport, ProbSequence, evaluate_f1

log = logging.getLogger(__name__)

ORIGINAL = "original"
AUDIO_PERTURBATIONS = ("f0_flat", "f0_shift", "low_pass", "intensity_flat", "duration_avg")
CUE_PERTURBATIONS = ("ablate", "shift")
DEFAULT_SHIFT_OFFSET = float(np.log(0.9))
REPORT_FORMAT = "vapkit-run/1"


# -- manifest ---------------------------------------------------------------------


@dataclass(frozen=True)
class ManifestEntry:
    """One dialog (or phrase rendering). Paths are absolute after loading.

    ``va`` is required; ``cues`` (``.npz`` of ``(2, T)`` tracks), ``audio`` (one channel
    per speaker, or mono for a single speaker) and ``embeddings`` (``.npy``) feed the
    frontends. The ``scp_*`` fields mark a phrase rendering for the region analysis.
    """

    name: str
    va: Path
    cues: Path | None = None
    audio: Path | None = None
    embeddings: Path | None = None
    alignment: Path | None = None
    duration: float | None = None
    phrase: int | None = None
    version: str | None = None
    scp_time: float | None = None
    word_end: float | None = None
    utterance_start: float = 0.0
    speaker: str = "A"

    @property
    def is_scp(self) -> bool:
        return self.scp_time is not None


_PATH_FIELDS = ("va", "cues", "audio", "embeddings", "alignment")


def load_manifest(path: str | Path) -> list[ManifestEntry]:
    """Read a JSON manifest: a list of entries or ``{"dialogs": [...]}``.

    Relative paths resolve against the manifest's directory; every referenced file must exist.
    """
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"manifest not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from None
    rows = raw.get("dialogs") if isinstance(raw, dict) else raw
    if not isinstance(rows, list) or not rows:
        raise ValidationError(f"{path}: manifest lists no dialogs")
    known = set(ManifestEntry.__dataclass_fields__)
    entries = []
    for i, row in enumerate(rows):
        if not isinstance(row, dict) or "va" not in row:
            raise ValidationError(f"{path}: entry #{i} needs at least a 'va' path")
        unknown = sorted(set(row) - known)
        if unknown:
            raise ValidationError(f"{path}: entry #{i} has unknown field(s) {unknown}")
        kw: dict[str, Any] = dict(row)
        kw.setdefault("name", Path(row["va"]).stem)
        for key in _PATH_FIELDS:
            if kw.get(key) is not None:
                p = Path(kw[key])
                p = p if p.is_absolute() else path.parent / p
                if not p.exists():
                    raise ValidationError(f"{path}: entry {kw['name']!r} references missing file {p}")
                kw[key] = p
        entries.append(ManifestEntry(**kw))
    names = [e.name for e in entries]
    if len(set(names)) != len(names):
        raise ValidationError(f"{path}: duplicate entry names")
    return entries


def manifest_digest(entries: Sequence[ManifestEntry]) -> str:
    """Content hash over the manifest entries and the bytes of every referenced file."""
    h = hashlib.sha256()
    for e in entries:
        h.update(json.dumps({k: str(v) for k, v in asdict(e).items() if k not in _PATH_FIELDS}, sort_keys=True).encode())
        for key in _PATH_FIELDS:
            p = getattr(e, key)
            h.update(key.encode())
            if p is not None:
                h.update(Path(p).read_bytes())
    return h.hexdigest()[:12]


# -- perturbations ----------------------------------------------------------------


@dataclass(frozen=True)
class Perturbation:
    """A named input transform: ``original``, an audio transform or a cue transform.

    Written as strings: ``f0_flat``, ``f0_shift[:factor]``, ``low_pass[:cutoff]``,
    ``intensity_flat``, ``duration_avg``, ``ablate:<cue>``, ``shift:<cue>[:offset]``.
    """

    kind: str
    cue: str | None = None
    value: float | None = None

    @property
    def name(self) -> str:
        parts = [self.kind] + ([self.cue] if self.cue else []) + ([f"{self.value:g}"] if self.value is not None else [])
        return ":".join(parts)

    @property
    def on_audio(self) -> bool:
        return self.kind in AUDIO_PERTURBATIONS

    @property
    def on_cues(self) -> bool:
        return self.kind in CUE_PERTURBATIONS

    @classmethod
    def parse(cls, text: str) -> "Perturbation":
        parts = text.strip().split(":")
        kind = parts[0]
        try:
            if kind == ORIGINAL and len(parts) == 1:
                return cls(ORIGINAL)
            if kind in ("f0_flat", "intensity_flat", "duration_avg") and len(parts) == 1:
                return cls(kind)
            if kind == "f0_shift" and len(parts) <= 2:
                return cls(kind, value=float(parts[1]) if len(parts) == 2 else 0.9)
            if kind == "low_pass" and len(parts) <= 2:
                return cls(kind, value=float(parts[1]) if len(parts) == 2 else 400.0)
            if kind == "ablate" and len(parts) == 2 and parts[1]:
                return cls(kind, cue=parts[1])
            if kind == "shift" and len(parts) in (2, 3) and parts[1]:
                return cls(kind, cue=parts[1], value=float(parts[2]) if len(parts) == 3 else DEFAULT_SHIFT_OFFSET)
        except ValueError:
            pass
        raise ValidationError(f"unknown perturbation {text!r}")


def _perturb_channel(
    wave: Waveform, p: Perturbation, va: Sequence[VaSegment], alignment: PhoneAlignment | None, means: Mapping[str, float]
) -> Waveform:
    if p.kind == "low_pass":
        return low_pass(wave, p.value)
    if p.kind == "intensity_flat":
        return flatten_intensity(wave, va)
    if p.kind == "duration_avg":
        if alignment is None:
            raise ValidationError("duration_avg needs a phone alignment for the entry")
        return scale_durations(wave, alignment, means)
    contour = estimate_f0(wave)
    if p.kind == "f0_flat":
        return flatten_f0(wave, contour, va)
    return shift_f0(wave, contour, p.value, va)


@dataclass
class PreparedEntry:
    inputs: DialogInputs
    time_map: Callable[[float], float] = float  # input seconds -> perturbed seconds


def prepare_inputs(
    entry: ManifestEntry,
    config: ModelConfig,
    perturbation: Perturbation = Perturbation(ORIGINAL),
    phone_means: Mapping[str, float] | None = None,
) -> PreparedEntry:
    """Load an entry's VA and frontend inputs and apply one perturbation."""
    segments = load_va_annotations(entry.va)
    p = perturbation
    needs_audio = config.frontend is Frontend.LOG_MEL or p.on_audio
    if p.on_cues and entry.cues is None:
        raise ValidationError(f"{entry.name}: perturbation {p.name} needs cue tracks")
    if needs_audio and entry.audio is None:
        raise ValidationError(f"{entry.name}: {'perturbation ' + p.name if p.on_audio else 'log_mel frontend'} needs audio")
    time_map: Callable[[float], float] = float
    mono = None
    duration = entry.duration
    if needs_audio:
        channels = [resample(w, config.sample_rate) for w in read_wav(entry.audio)]
        if len(channels) > len(SPEAKERS):
            raise ValidationError(f"{entry.name}: audio has {len(channels)} channels; expected 1 or 2")
        if len(channels) == 1:
            channels = [Waveform(channels[0].samples, channels[0].sample_rate, entry.speaker)]
        if p.on_audio:
            alignment = read_alignment(entry.alignment) if entry.alignment else None
            if p.kind == "duration_avg":
                if len(channels) != 1:
                    raise ValidationError(f"{entry.name}: duration_avg applies to single-speaker audio only")
                if alignment is None:
                    raise ValidationError(f"{entry.name}: duration_avg needs a phone alignment")
                ki, ko = duration_map(alignment, phone_means or {}, channels[0].duration)
                time_map = lambda t, ki=ki, ko=ko: float(np.interp(t, ki, ko))  # noqa: E731
                segments = [VaSegment(s.speaker, time_map(s.start), time_map(s.end)) for s in segments]
                duration = None if duration is None else time_map(duration)
            channels = [_perturb_channel(w, p, load_va_annotations(entry.va), alignment, phone_means or {}) for w in channels]
        mono = mix_to_mono(channels)
        if duration is None:
            duration = max(mono.duration, max((s.end for s in segments), default=0.0))
    grid = rasterize_va(segments, config.frame_rate, duration)
    cues: dict[str, np.ndarray] = {}
    if entry.cues is not None:
        with np.load(entry.cues) as npz:
            cues = {k: np.asarray(npz[k]) for k in npz.files}
        if p.kind == "ablate":
            cues = ablate_cue(cues, p.cue)
        elif p.kind == "shift":
            cues = shift_cue(cues, p.cue, p.value, grid.frames if grid.frames.shape == cues[p.cue].shape else None)
    embeddings = np.load(entry.embeddings) if entry.embeddings is not None else None
    audio = None if mono is None else mono.samples.astype(np.float32)
    return PreparedEntry(DialogInputs(grid, cues, audio, embeddings, entry.name), time_map)


# -- report -----------------------------------------------------------------------


@dataclass
class RunReport:
    """Per-perturbation, per-metric results plus everything needed to reproduce them."""

    seed: int
    model_config: dict
    aggregation: dict
    checkpoint: str
    manifest: str
    perturbations: list[str]
    metrics: list[str]
    reports: dict[str, dict[str, EvalReport]] = field(default_factory=dict)
    scp: dict[str, list[ScpRow]] = field(default_factory=dict)
    events: dict[str, int] = field(default_factory=dict)
    complete: bool = True
    event_config: dict = field(default_factory=lambda: asdict(EventConfig()))

    def __post_init__(self) -> None:
        # JSON-normalize the config blobs so a saved and reloaded report compares equal
        self.model_config = json.loads(json.dumps(self.model_config))
        self.aggregation = json.loads(json.dumps(self.aggregation))
        self.event_config = json.loads(json.dumps(self.event_config))

    def scp_summary(self) -> dict[str, dict[str, dict[str, float]]]:
        return {name: summarize_scp(rows) for name, rows in self.scp.items()}

    def to_dict(self) -> dict:
        return {
            "format": REPORT_FORMAT,
            "provenance": {
                "seed": self.seed,
                "model_config": self.model_config,
                "aggregation": self.aggregation,
                "event_config": self.event_config,
                "checkpoint": self.checkpoint,
                "manifest": self.manifest,
            },
            "perturbations": self.perturbations,
            "metrics": self.metrics,
            "complete": self.complete,
            "events": self.events,
            "reports": {p: {m: r.to_dict() for m, r in reps.items()} for p, reps in self.reports.items()},
            "scp": {p: [r.to_dict() for r in rows] for p, rows in self.scp.items()},
            "scp_summary": self.scp_summary(),
        }

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "RunReport":
        if raw.get("format") != REPORT_FORMAT:
            raise ValidationError(f"not a run report (format {raw.get('format')!r})")
        prov = raw["provenance"]
        reports = {
            p: {m: EvalReport.from_confusion(m, r["tp"], r["fp"], r["fn"], r["tn"]) for m, r in reps.items()}
            for p, reps in raw["reports"].items()
        }
        scp = {p: [ScpRow(**r) for r in rows] for p, rows in raw.get("scp", {}).items()}
        return cls(
            prov["seed"], prov["model_config"], prov["aggregation"], prov["checkpoint"], prov["manifest"],
            list(raw["perturbations"]), list(raw["metrics"]), reports, scp, dict(raw.get("events", {})),
            bool(raw.get("complete", True)),
            prov.get("event_config", asdict(EventConfig())),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True))

    @classmethod
    def load(cls, path: str | Path) -> "RunReport":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ValidationError(f"{path}: unreadable run report ({exc})") from None


# -- pipeline ---------------------------------------------------------------------


def _perturbation_list(perturbations: Iterable[str | Perturbation]) -> list[Perturbation]:
    out = [Perturbation(ORIGINAL)]
    for p in perturbations:
        p = p if isinstance(p, Perturbation) else Perturbation.parse(p)
        if p.name not in {q.name for q in out}:
            out.append(p)
    return out


def run_pipeline(
    manifest: str | Path | Sequence[ManifestEntry],
    checkpoint: str | Path,
    perturbations: Iterable[str | Perturbation] = (),
    metrics: Sequence[str] = METRICS,
    seed: int = 0,
    out_dir: str | Path | None = None,
    aggregation: AggregationConfig = DEFAULT_AGGREGATION,
    plots: bool = True,
    event_config: EventConfig | None = None,
) -> RunReport:
    """Evaluate a checkpoint on every manifest entry under the original inputs and each perturbation.

    Events come from the unperturbed VA with a per-entry RNG derived from ``seed``.
    Entries with ``scp_time`` feed the region analysis instead of the event metrics.
    On failure the results gathered so far are written to ``report.partial.json``
    (when ``out_dir`` is given) and a :class:`StageError` names the stage and file.
    """
    unknown = sorted(set(metrics) - set(METRICS))
    if unknown:
        raise ValidationError(f"unknown metric(s) {unknown}; available: {METRICS}")
    source = str(manifest) if isinstance(manifest, (str, Path)) else "<entries>"
    try:
        entries = load_manifest(manifest) if isinstance(manifest, (str, Path)) else list(manifest)
    except ValidationError as exc:
        raise StageError("manifest", source, exc) from exc
    try:
        ckpt = load_checkpoint(checkpoint)
    except VapError as exc:
        raise StageError("checkpoint", str(checkpoint), exc) from exc
    model = ckpt.build()
    pert_list = _perturbation_list(perturbations)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    report = RunReport(
        seed=seed,
        model_config=ckpt.config.to_dict(),
        aggregation=asdict(aggregation),
        checkpoint=checkpoint_id(checkpoint),
        manifest=manifest_digest(entries),
        perturbations=[p.name for p in pert_list],
        metrics=list(metrics),
        event_config=asdict(event_config or EventConfig()),
    )
    phone_means = phone_means_from_alignments(read_alignment(e.alignment) for e in entries if e.alignment)
    dialogs = [e for e in entries if not e.is_scp]
    phrases = [e for e in entries if e.is_scp]

    def fail(stage: str, entry: ManifestEntry, exc: BaseException) -> StageError:
        report.complete = False
        if out is not None:
            report.save(out / "report.partial.json")
        where = next((str(getattr(entry, k)) for k in ("audio", "cues", "embeddings", "va") if getattr(entry, k)), entry.name)
        return StageError(stage, where, exc)

    events: list[EventSet] = []
    grids = []
    for i, e in enumerate(dialogs):
        try:
            grid = prepare_inputs(e, ckpt.config).inputs.grid
            events.append(extract_events(grid, rng=np.random.default_rng([seed, i]), config=event_config))
            grids.append(grid)
        except (VapError, OSError, ValueError) as exc:
            raise fail("events", e, exc) from exc
    report.events = _event_totals(events)

    for p in pert_list:
        reps: dict[str, EvalReport] = {}
        for e, ev, grid in zip(dialogs, events, grids):
            try:
                prepared = prepare_inputs(e, ckpt.config, p, phone_means)
                if prepared.inputs.grid != grid:
                    raise ValidationError(f"perturbation {p.name} changes the VA timing of a dialog")
            except (VapError, OSError, ValueError) as exc:
                raise fail(f"perturb:{p.name}", e, exc) from exc
            try:
                feats = frame_features(prepared.inputs, ckpt.config)
                probs = ProbSequence.from_logits(infer_logits(model, feats), ckpt.config.frame_rate)
            except (VapError, OSError, ValueError, FloatingPointError) as exc:
                raise fail("model", e, exc) from exc
            for m in metrics:
                r = evaluate_f1(ev, probs, metric=m, config=aggregation)
                reps[m] = r if m not in reps else reps[m].merge(r)
        if dialogs:
            report.reports[p.name] = reps
        if phrases:
            items = []
            for e in phrases:
                try:
                    items.append(_scp_item(e, ckpt.config, p, phone_means))
                except (VapError, OSError, ValueError) as exc:
                    raise fail(f"perturb:{p.name}", e, exc) from exc
            try:
                report.scp[p.name] = evaluate_scp(model, items, aggregation)
            except (VapError, ValueError, FloatingPointError) as exc:
                raise fail("scp", phrases[0], exc) from exc
        log.info("perturbation %s done", p.name)

    if out is not None:
        report.save(out / "report.json")
        partial = out / "report.partial.json"
        if partial.exists():
            partial.unlink()
        write_tables(report, out)
        if plots:
            from vapkit.harness.plots import render_report

            render_report(report, out)
    return report


def _event_totals(events: Sequence[EventSet]) -> dict[str, int]:
    totals: dict[str, int] = {}
    for ev in events:
        for k, v in events_summary(ev).items():
            for kk, vv in (v.items() if isinstance(v, dict) else [("", v)]):
                key = f"{k}.{kk}" if kk else k
                totals[key] = totals.get(key, 0) + int(vv)
    return totals


def _scp_item(entry: ManifestEntry, config: ModelConfig, p: Perturbation, phone_means: Mapping[str, float]) -> ScpItem:
    prepared = prepare_inputs(entry, config, p, phone_means)
    tm = prepared.time_map
    word_end = entry.word_end if entry.word_end is not None else entry.scp_time
    return ScpItem(
        phrase=entry.phrase or 0,
        version=entry.version or "short",
        inputs=prepared.inputs,
        scp_time=tm(entry.scp_time),
        word_end=tm(word_end),
        utterance_start=tm(entry.utterance_start),
        speaker=entry.speaker,
        name=entry.name,
    )


def write_tables(report: RunReport, out_dir: str | Path) -> list[Path]:
    """CSV tables: one row per perturbation and metric, and one per SCP rendering."""
    import csv

    out = Path(out_dir)
    paths = []
    if report.reports:
        path = out / "scores.csv"
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["perturbation", "metric", "weighted_f1", "baseline", "tp", "fp", "fn", "tn"])
            for p, reps in report.reports.items():
                for m, r in reps.items():
                    w.writerow([p, m, f"{r.weighted_f1:.6f}", f"{r.baseline_weighted_f1:.6f}", r.tp, r.fp, r.fn, r.tn])
        paths.append(path)
    if report.scp:
        path = out / "scp_regions.csv"
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["perturbation", "name", "phrase", "version", "hold", "predictive", "reactive"])
            for p, rows in report.scp.items():
                for r in rows:
                    w.writerow([p, r.name, r.phrase, r.version, f"{r.hold:.6f}", f"{r.predictive:.6f}", f"{r.reactive:.6f}"])
        paths.append(path)
    return paths


# -- export -----------------------------------------------------------------------


def export_inputs(inputs: DialogInputs, out_dir: str | Path, **extra: Any) -> dict[str, Any]:
    """Write one dialog's VA (JSON) and cue tracks (``.npz``); returns its manifest entry."""
    from vapkit.va import grid_to_segments, save_va_annotations

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    name = inputs.name
    if not name:
        raise ValidationError("exported dialogs need a name")
    save_va_annotations(grid_to_segments(inputs.grid), out / f"{name}.json")
    entry: dict[str, Any] = {"name": name, "va": f"{name}.json", "duration": inputs.grid.n_frames / inputs.grid.frame_rate}
    if inputs.cues:
        np.savez(out / f"{name}.npz", **inputs.cues)
        entry["cues"] = f"{name}.npz"
    entry.update(extra)
    return entry


def write_manifest(entries: Sequence[Mapping[str, Any]], path: str | Path) -> Path:
    path = Path(path)
    path.write_text(json.dumps({"dialogs": list(entries)}, indent=1))
    return path


def export_scp_items(items: Sequence[ScpItem], out_dir: str | Path) -> Path:
    """Write phrase renderings and a manifest carrying their completion-point times."""
    rows = [
        export_inputs(
            it.inputs, out_dir, phrase=it.phrase, version=it.version, scp_time=it.scp_time,
            word_end=it.word_end, utterance_start=it.utterance_start, speaker=it.speaker,
        )
        for it in items
    ]
    return write_manifest(rows, Path(out_dir) / "manifest.json")
