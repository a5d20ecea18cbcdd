"""Command-line entry point: ``vapkit <subcommand> ...``.

Exit codes: 0 success, 1 invalid input or configuration, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from vapkit.errors import StageError, ValidationError, VapError
from vapkit.va import FRAME_RATES, BinConfig, decode_class, load_va_annotations, projection_labels, rasterize_va

log = logging.getLogger("vapkit")

EXIT_OK, EXIT_INVALID, EXIT_FAILURE = 0, 1, 2


def _config(args):
    from vapkit.harness.config import load_config

    return load_config(args.config).with_overrides(seed=args.seed, frame_rate=args.frame_rate)


# -- subcommands ------------------------------------------------------------------


def cmd_synth(args) -> int:
    from vapkit.events import extract_events, write_events_jsonl
    from vapkit.harness.pipeline import export_inputs, export_scp_items, write_manifest
    from vapkit.harness.scp import ScpSynthSpec, load_phrases, synthetic_scp_items
    from vapkit.harness.synth import generate_corpus
    from vapkit.model.features import DialogInputs

    cfg = _config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, d in enumerate(generate_corpus(cfg.synth, args.n)):
        name = f"dialog{i:04d}"
        entries.append(export_inputs(DialogInputs(d.grid, d.cues, name=name), out))
        write_events_jsonl(extract_events(d.grid, rng=np.random.default_rng([cfg.synth.seed, i]), config=cfg.events), out / f"{name}.events.jsonl")
    path = write_manifest(entries, out / "manifest.json")
    print(f"wrote {len(entries)} dialogs to {path}")
    if args.phrases:
        spec = ScpSynthSpec(frame_rate=cfg.synth.frame_rate, seed=cfg.synth.seed, dialog=cfg.synth)
        path = export_scp_items(synthetic_scp_items(spec), out / "phrases")
        print(f"wrote {2 * len(load_phrases())} phrase renderings to {path}")
    return EXIT_OK


def cmd_encode(args) -> int:
    cfg = _config(args)
    segments = load_va_annotations(args.va)
    grid = rasterize_va(segments, cfg.model.frame_rate, args.duration)
    labels = projection_labels(grid, BinConfig(cfg.model.bin_durations))
    with Path(args.out).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame", "time", "A", "B", "class", "bits"])
        for t, c in enumerate(labels):
            bits = "" if c < 0 else "".join(str(b) for b in decode_class(int(c)).bits)
            w.writerow([t, f"{(t + 0.5) / grid.frame_rate:.4f}", grid.frames[0, t], grid.frames[1, t], int(c), bits])
    n = int((labels >= 0).sum())
    print(f"{grid.n_frames} frames, {n} labelled -> {args.out}")
    return EXIT_OK


def cmd_events(args) -> int:
    from vapkit.events import events_summary, extract_events, write_events_jsonl

    cfg = _config(args)
    grid = rasterize_va(load_va_annotations(args.va), cfg.model.frame_rate, args.duration)
    events = extract_events(grid, rng=cfg.train.seed, config=cfg.events)
    write_events_jsonl(events, args.out)
    print(json.dumps(events_summary(events)))
    return EXIT_OK


def cmd_perturb(args) -> int:
    from vapkit.harness.pipeline import Perturbation, _perturb_channel
    from vapkit.perturb.audio import read_alignment, read_phone_means, read_wav, write_wav

    p = Perturbation.parse(args.kind)
    if not p.on_audio:
        raise ValidationError(f"{args.kind!r} is not an audio perturbation")
    va = load_va_annotations(args.va) if args.va else []
    alignment = read_alignment(args.alignment) if args.alignment else None
    means = read_phone_means(args.phone_means) if args.phone_means else {}
    channels = read_wav(args.input)
    out = [_perturb_channel(w, p, va, alignment, means) for w in channels]
    write_wav(args.out, out)
    print(f"{p.name}: {len(out)} channel(s) -> {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    from vapkit.harness.pipeline import load_manifest, prepare_inputs
    from vapkit.model.checkpoint import save_checkpoint
    from vapkit.model.features import frame_features
    from vapkit.model.train import split_dataset, train

    cfg = _config(args)
    settings = cfg.train
    overrides = {k: v for k, v in (("max_epochs", args.max_epochs), ("max_seconds", args.max_seconds), ("lr", args.lr)) if v is not None}
    if overrides:
        settings = type(settings).from_dict({**settings.to_dict(), **overrides})
    entries = [e for e in load_manifest(args.manifest) if not e.is_scp]
    feats = []
    for e in entries:
        try:
            feats.append(frame_features(prepare_inputs(e, cfg.model).inputs, cfg.model))
        except VapError as exc:
            raise StageError("features", str(e.va), exc) from exc
    tr, va = split_dataset(feats, settings.val_fraction, settings.seed)
    result = train(tr, va, cfg.model, settings)
    save_checkpoint(result.checkpoint, args.out)
    print(f"best epoch {result.best_epoch} of {result.stopped_epoch} ({result.stop_reason}) -> {args.out}")
    return EXIT_OK


def _perturbations(args) -> list[str]:
    return [p for item in (args.perturb or []) for p in item.split(",") if p]


def cmd_eval(args) -> int:
    from vapkit.harness.pipeline import run_pipeline

    cfg = _config(args)
    metrics = [m for m in args.metrics.split(",") if m]
    report = run_pipeline(
        args.manifest, args.checkpoint, _perturbations(args), metrics, cfg.train.seed, args.out,
        cfg.aggregation, event_config=cfg.events,
    )
    for p, reps in report.reports.items():
        for m, r in reps.items():
            print(f"{p:24s} {m:12s} weighted F1 {r.weighted_f1:.3f} (majority {r.baseline_weighted_f1:.3f}, n={r.n_events})")
    print(f"report -> {Path(args.out) / 'report.json'}")
    return EXIT_OK


def cmd_scp(args) -> int:
    from vapkit.harness.pipeline import export_scp_items, run_pipeline
    from vapkit.harness.scp import ScpSynthSpec, synthetic_scp_items

    cfg = _config(args)
    out = Path(args.out)
    manifest = args.manifest
    if manifest is None:
        spec = ScpSynthSpec(frame_rate=cfg.model.frame_rate, seed=cfg.synth.seed, dialog=cfg.synth)
        manifest = export_scp_items(synthetic_scp_items(spec), out / "phrases")
    report = run_pipeline(manifest, args.checkpoint, _perturbations(args), (), cfg.train.seed, out, cfg.aggregation)
    for p, summary in report.scp_summary().items():
        for version, vals in summary.items():
            print(f"{p:24s} {version:6s} " + " ".join(f"{k} {v:.3f}" for k, v in vals.items()))
    return EXIT_OK


def cmd_report(args) -> int:
    from vapkit.harness.pipeline import RunReport, write_tables
    from vapkit.harness.plots import render_report

    report = RunReport.load(args.run)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_tables(report, out)
    render_report(report, out)
    print(f"figures and tables -> {out}")
    return EXIT_OK


# -- parser -----------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    """Usage errors are invalid input, so they exit with 1 rather than argparse's 2."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _global_flags(defaults: bool) -> argparse.ArgumentParser:
    # subcommands repeat the global flags without defaults so they never mask a value given earlier
    d = (lambda v: v) if defaults else (lambda v: argparse.SUPPRESS)
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=d(None), help="seed for every random draw (default: from config, else 0)")
    p.add_argument("--frame-rate", type=int, choices=FRAME_RATES, default=d(None), help="model/VA frame rate in Hz")
    p.add_argument("--config", type=Path, default=d(None), help="YAML file with model/train/aggregation/synth/events sections")
    p.add_argument("-v", "--verbose", action="store_true", default=d(False))
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags(defaults=False)
    parser = _Parser(prog="vapkit", description=__doc__.splitlines()[0], parents=[_global_flags(defaults=True)])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate synthetic dialogs with cue tracks")
    p.add_argument("--n", type=int, default=10, help="number of dialogs")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--phrases", action="store_true", help="also render the short/long phrase pairs")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("encode", parents=[common], help="per-frame projection classes of a VA file")
    p.add_argument("--va", required=True, help="VA segments (JSON or CSV: speaker,start,end)")
    p.add_argument("--duration", type=float, default=None, help="dialog length in seconds")
    p.add_argument("--out", required=True, help="output CSV")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("events", parents=[common], help="extract shift/hold/backchannel events")
    p.add_argument("--va", required=True)
    p.add_argument("--duration", type=float, default=None)
    p.add_argument("--out", required=True, help="output JSONL")
    p.set_defaults(func=cmd_events)

    p = sub.add_parser("perturb", parents=[common], help="apply a prosody perturbation to a WAV file")
    p.add_argument("--input", required=True, help="input WAV (one channel per speaker)")
    p.add_argument("--kind", required=True, help="f0_flat, f0_shift[:factor], low_pass[:cutoff], intensity_flat, duration_avg")
    p.add_argument("--va", default=None, help="VA segments (needed by f0_flat and intensity_flat)")
    p.add_argument("--alignment", default=None, help="phone alignment CSV (duration_avg)")
    p.add_argument("--phone-means", default=None, help="JSON of mean phone durations (duration_avg)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_perturb)

    p = sub.add_parser("train", parents=[common], help="train a predictor on a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="checkpoint path (.safetensors)")
    p.add_argument("--max-epochs", type=int, default=None)
    p.add_argument("--max-seconds", type=float, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="zero-shot evaluation under perturbations")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--perturb", action="append", help="perturbation(s), comma separated or repeated")
    p.add_argument("--metrics", default="shift_hold,shift_pred,bc_pred")
    p.add_argument("--out", required=True, help="report directory")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("scp", parents=[common], help="region analysis of short/long phrase pairs")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", default=None, help="phrase manifest; synthetic renderings when omitted")
    p.add_argument("--perturb", action="append")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_scp)

    p = sub.add_parser("report", parents=[common], help="re-render figures and tables of a saved run")
    p.add_argument("--run", required=True, help="report.json of a previous eval/scp run")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # usage errors and --help
        return exc.code if isinstance(exc.code, int) else EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID if isinstance(exc.cause, ValidationError) else EXIT_FAILURE
    except (VapError, OSError, RuntimeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
