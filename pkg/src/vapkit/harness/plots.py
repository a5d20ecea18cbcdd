"""Static report figures (SVG) with a CSV of the plotted numbers next to each."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from vapkit.harness.scp import REGIONS, VERSIONS  # noqa: E402
from vapkit.zeroshot import majority_baseline  # noqa: E402

METRIC_TITLES = {"shift_hold": "Shift/Hold", "shift_pred": "Shift prediction", "bc_pred": "Backchannel prediction"}


def plot_metric(report, metric: str, out_dir: str | Path) -> float:
    """Bar per perturbation with the majority-class baseline as a dashed line.

    The baseline is recomputed from the class supports of the unperturbed report;
    the returned value is the y of the line as drawn.
    """
    out = Path(out_dir)
    names = [p for p in report.perturbations if metric in report.reports.get(p, {})]
    values = [report.reports[p][metric].weighted_f1 for p in names]
    ref = report.reports[names[0]][metric]
    n_pos, n_neg = ref.tp + ref.fn, ref.tn + ref.fp
    baseline = majority_baseline(n_pos, n_neg)
    fig, ax = plt.subplots(figsize=(1.2 + 1.1 * len(names), 3.2))
    bars = ax.bar(range(len(names)), values, color="#4c72b0")
    ax.bar_label(bars, fmt="%.2f", fontsize=8)
    (line,) = ax.plot([-0.5, len(names) - 0.5], [baseline, baseline], "k--", lw=1, label=f"majority {baseline:.2f}")
    ax.set_xticks(range(len(names)), names, rotation=30, ha="right", fontsize=8)
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("weighted F1")
    ax.set_title(METRIC_TITLES.get(metric, metric))
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(out / f"f1_{metric}.svg")
    drawn = float(line.get_ydata()[0])
    plt.close(fig)
    with (out / f"f1_{metric}.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["perturbation", "weighted_f1", "baseline", "n_positive", "n_negative"])
        for p, v in zip(names, values):
            w.writerow([p, f"{v:.6f}", f"{drawn:.6f}", n_pos, n_neg])
    return drawn


def plot_scp(report, out_dir: str | Path) -> Path:
    """Grouped bars of mean shift probability per region, one panel per perturbation."""
    out = Path(out_dir)
    summary = report.scp_summary()
    names = list(summary)
    fig, axes = plt.subplots(1, len(names), figsize=(3.2 * len(names), 3.2), sharey=True, squeeze=False)
    colors = {"short": "#dd8452", "long": "#4c72b0"}
    for ax, name in zip(axes[0], names):
        for k, version in enumerate(v for v in VERSIONS if v in summary[name]):
            vals = [summary[name][version][r] for r in REGIONS]
            ax.bar([i + (k - 0.5) * 0.38 for i in range(len(REGIONS))], vals, width=0.38, color=colors[version], label=version)
        ax.axhline(0.5, color="k", ls=":", lw=1)
        ax.set_xticks(range(len(REGIONS)), REGIONS)
        ax.set_ylim(0, 1)
        ax.set_title(name, fontsize=9)
    axes[0][0].set_ylabel("shift probability")
    axes[0][0].legend(fontsize=8)
    fig.tight_layout()
    path = out / "scp_regions.svg"
    fig.savefig(path)
    plt.close(fig)
    with (out / "scp_summary.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["perturbation", "version", *REGIONS])
        for name in names:
            for version, vals in summary[name].items():
                w.writerow([name, version, *(f"{vals[r]:.6f}" for r in REGIONS)])
    return path


def render_report(report, out_dir: str | Path) -> dict[str, float]:
    """Write every figure; returns the plotted baseline per metric."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    drawn = {}
    if report.reports:
        for metric in report.metrics:
            drawn[metric] = plot_metric(report, metric, out)
    if report.scp:
        plot_scp(report, out)
    return drawn
