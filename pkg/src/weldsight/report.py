"""Report rendering: CSV tables, a formatted text view, and figures."""

from __future__ import annotations

import csv
import os

import numpy as np

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .dataset import NOK, OK  # noqa: E402


def report_to_csv(report, out_dir):
    """Write report.csv (one row per cell) and seed_summary.csv.

    Float cells are written with repr so repeated runs of the same
    deterministic experiment produce byte-identical files.
    """
    os.makedirs(out_dir, exist_ok=True)
    report_path = os.path.join(out_dir, "report.csv")
    with open(report_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["weld", "extractor", "seed", "path", "accuracy",
                         "tp", "tn", "fp", "fn", "delta_vs_old"])
        for c in report.cells:
            writer.writerow([c.weld, c.extractor, c.seed, c.path, repr(float(c.accuracy)),
                             c.tp, c.tn, c.fp, c.fn, repr(float(c.delta_vs_old))])
    summary_path = os.path.join(out_dir, "seed_summary.csv")
    with open(summary_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["weld", "extractor", "seed", "old_accuracy", "best_new_accuracy",
                         "best_classifier", "rcr_mean_ok", "rcr_mean_nok", "biased"])
        for s in report.summaries:
            writer.writerow([s.weld, s.extractor, s.seed, repr(float(s.old_accuracy)),
                             repr(float(s.best_new_accuracy)), s.best_classifier,
                             repr(float(s.rcr_mean_ok)), repr(float(s.rcr_mean_nok)), int(s.biased)])
    return report_path, summary_path


def _mean_by_path(report, weld, extractor):
    by_path = {}
    for c in report.cells:
        if c.weld == weld and c.extractor == extractor:
            by_path.setdefault(c.path, []).append(c.accuracy)
    return {path: float(np.mean(vals)) for path, vals in by_path.items()}


def _grid(report):
    welds = list(dict.fromkeys(c.weld for c in report.cells))
    extractors = list(dict.fromkeys(c.extractor for c in report.cells))
    paths = list(dict.fromkeys(c.path for c in report.cells))
    return welds, extractors, paths


def report_to_text(report):
    """Accuracy per weld and classifier, averaged over seeds."""
    welds, extractors, paths = _grid(report)
    lines = []
    header = ["weld", "extractor"] + paths
    widths = [max(10, len(h) + 2) for h in header]
    lines.append("".join(h.ljust(w) for h, w in zip(header, widths)))
    lines.append("-" * sum(widths))
    for weld in welds:
        for extractor in extractors:
            means = _mean_by_path(report, weld, extractor)
            if not means:
                continue
            row = [weld, extractor] + [f"{100 * means[p]:.1f}%" if p in means else "-"
                                       for p in paths]
            lines.append("".join(v.ljust(w) for v, w in zip(row, widths)))
    return "\n".join(lines) + "\n"


def save_accuracy_figure(report, out_dir):
    """Grouped bars: argmax path vs each hybrid classifier, per weld."""
    welds, extractors, paths = _grid(report)
    groups = [(w, e) for w in welds for e in extractors
              if _mean_by_path(report, w, e)]
    fig, ax = plt.subplots(figsize=(1.8 + 1.6 * len(groups), 4.0))
    width = 0.8 / max(len(paths), 1)
    xs = np.arange(len(groups))
    for i, path in enumerate(paths):
        vals = [100 * _mean_by_path(report, w, e).get(path, np.nan) for w, e in groups]
        ax.bar(xs + i * width, vals, width, label=path)
    ax.set_xticks(xs + 0.4 - width / 2)
    ax.set_xticklabels([f"{w}\n{e}" for w, e in groups], fontsize=8)
    ax.set_ylabel("held-out accuracy (%)")
    ax.set_ylim(0, 105)
    ax.legend(fontsize=8)
    ax.set_title("argmax path vs hybrid classifiers")
    fig.tight_layout()
    path = os.path.join(out_dir, "accuracy_comparison.png")
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_feature_scatter(report, out_dir):
    """Reliability-score view of one held-out split: defect score against
    red ratio, colored by the true label."""
    if report.scatter is None:
        return None
    x, y = report.scatter.x, report.scatter.y
    fig, ax = plt.subplots(figsize=(5.5, 4.2))
    ok = y == 0
    ax.scatter(x[ok, 1], x[ok, 2], marker="o", s=18, alpha=0.7, label=OK)
    ax.scatter(x[~ok, 1], x[~ok, 2], marker="^", s=26, alpha=0.9, label=NOK)
    ax.set_xlabel("defect-class score")
    ax.set_ylabel("red color ratio (%)")
    ax.set_title("held-out images by score and red ratio")
    ax.legend()
    fig.tight_layout()
    path = os.path.join(out_dir, "feature_scatter.png")
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_all(report, out_dir):
    """CSV pair, text table, and both figures under `out_dir`."""
    paths = list(report_to_csv(report, out_dir))
    text = report_to_text(report)
    text_path = os.path.join(out_dir, "report.txt")
    with open(text_path, "w") as fh:
        fh.write(text)
    paths.append(text_path)
    paths.append(save_accuracy_figure(report, out_dir))
    scatter = save_feature_scatter(report, out_dir)
    if scatter:
        paths.append(scatter)
    return paths
