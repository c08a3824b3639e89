"""Matplotlib figures for attack runs, written next to the csv/text output."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.fontsize": 8,
    "legend.frameon": False,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "savefig.dpi": 120,
    "savefig.bbox": "tight",
}

TARGET_COLOR = "#c0392b"
ORIGINAL_COLOR = "#2c3e50"


def _save(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_topk(report, path) -> Path:
    """Side-by-side top-k bar charts for the initial and the worst image."""
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 2, figsize=(8, 0.35 * len(report.initial_topk) + 1.4), sharex=True,
                                 layout="constrained")
        titles = ("Initial image", f"Worst image (iteration {report.worst_iteration_index})")
        for ax, title, table in zip(axes, titles, (report.initial_topk, report.worst_topk)):
            names = [n for n, _ in table][::-1]
            probs = [p for _, p in table][::-1]
            colors = [
                TARGET_COLOR if n == report.target_class else ORIGINAL_COLOR if n == report.original_class else "0.6"
                for n in names
            ]
            ax.barh(names, probs, color=colors)
            ax.set_xlim(0, 1)
            ax.set_title(title)
            ax.set_xlabel("probability")
        fig.suptitle("VERDICT: GAP FOUND" if report.verdict == "gap_found" else "VERDICT: NO GAP", fontsize=10)
        return _save(fig, path)


def plot_trace(rows, path, original_class: str = "original", target_class: str = "target") -> Path:
    """Target and original-class probability per iteration."""
    idx = [r["index"] for r in rows]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 3))
        ax.plot(idx, [r["target_prob"] for r in rows], "o-", ms=3, color=TARGET_COLOR, label=f"target ({target_class})")
        ax.plot(idx, [r["original_class_prob"] for r in rows], "s-", ms=3, color=ORIGINAL_COLOR,
                label=f"original ({original_class})")
        ax.set_ylim(-0.02, 1.02)
        ax.set_xlabel("iteration")
        ax.set_ylabel("probability")
        ax.legend(loc="best")
        return _save(fig, path)


def plot_iterations(images, path, max_images: int = 6) -> Path:
    """Strip of evenly spaced iterations, always including the first and last."""
    images = list(images)
    picks = sorted({int(round(v)) for v in np.linspace(0, len(images) - 1, min(max_images, len(images)))})
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(picks), figsize=(1.4 * len(picks), 1.7), squeeze=False)
        for ax, i in zip(axes[0], picks):
            ax.imshow(np.clip(images[i], 0, 1), interpolation="nearest")
            ax.set_title(f"iter {i}")
            ax.axis("off")
        return _save(fig, path)


def render_run_figures(run_dir, report, trace_rows, images) -> list[Path]:
    run_dir = Path(run_dir)
    return [
        plot_topk(report, run_dir / "topk.png"),
        plot_trace(trace_rows, run_dir / "trace.png", report.original_class, report.target_class),
        plot_iterations(images, run_dir / "iterations.png"),
    ]
