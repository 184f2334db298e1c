"""Chart rendering for bench results: detection counts per trial and the
offloaded-vs-local work ratio, written as PNG files next to the CSV."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .bench import EFFICIENCY_THRESHOLD, TrialReport


def render_detection_figure(reports: Sequence[TrialReport], path: Path) -> Path:
    """Grouped bars of detected vs undetected threats per trial."""
    path = Path(path)
    trials = [r.trial_id for r in reports]
    detected = [r.detected for r in reports]
    undetected = [r.undetected for r in reports]
    x = range(len(trials))
    width = 0.38

    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar([i - width / 2 for i in x], detected, width, label="detected", color="#2f7d31")
    ax.bar([i + width / 2 for i in x], undetected, width, label="undetected", color="#c62828")
    for i, (d, u) in enumerate(zip(detected, undetected)):
        ax.annotate(str(d), (i - width / 2, d), ha="center", va="bottom", fontsize=8)
        ax.annotate(str(u), (i + width / 2, u), ha="center", va="bottom", fontsize=8)
    ax.set_xticks(list(x))
    ax.set_xticklabels(trials)
    ax.set_xlabel("trial")
    ax.set_ylabel("threats")
    ax.set_title("Threat detection per trial")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_efficiency_figure(reports: Sequence[TrialReport], path: Path) -> Path:
    """Per-trial device work ratio (offloaded / local) against the pass line."""
    path = Path(path)
    trials = [r.trial_id for r in reports]
    ratios = [r.work_ratio if r.work_ratio is not None else 0.0 for r in reports]

    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar(trials, ratios, width=0.5, color="#1565c0", label="offloaded / local work")
    ax.axhline(
        EFFICIENCY_THRESHOLD, color="#c62828", linestyle="--", linewidth=1,
        label=f"threshold {EFFICIENCY_THRESHOLD:.2f}",
    )
    for i, ratio in enumerate(ratios):
        ax.annotate(f"{ratio:.3f}", (i, ratio), ha="center", va="bottom", fontsize=8)
    ax.set_ylim(0, max(max(ratios), EFFICIENCY_THRESHOLD) * 1.3)
    ax.set_xlabel("trial")
    ax.set_ylabel("work ratio")
    ax.set_title("Device work: offloaded vs local")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_all(reports: Sequence[TrialReport], out_dir: Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return [
        render_detection_figure(reports, out / "detection_accuracy.png"),
        render_efficiency_figure(reports, out / "cpu_efficiency.png"),
    ]
