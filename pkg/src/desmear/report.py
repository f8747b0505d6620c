"""Report rendering: delimited tables plus matplotlib figures."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .core import LABEL_SMEARED, LABEL_UNKNOWN  # noqa: E402


def write_csv(path: str | Path, rows: list[dict], fieldnames: list[str]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k) for k in fieldnames})
    return path


def pr_points(scores: np.ndarray, gt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(recall, precision) staircase for one frame, smeared positive."""
    keep = gt != LABEL_UNKNOWN
    s = np.asarray(scores)[keep].ravel()
    y = (gt[keep] == LABEL_SMEARED).ravel()
    n_pos = y.sum()
    if n_pos == 0:
        return np.array([]), np.array([])
    order = np.argsort(-s, kind="stable")
    y_sorted = y[order]
    s_sorted = s[order]
    tp = np.cumsum(y_sorted)
    ranks = np.arange(1, len(s_sorted) + 1)
    ends = np.append(np.nonzero(np.diff(s_sorted))[0], len(s_sorted) - 1)
    return tp[ends] / n_pos, tp[ends] / ranks[ends]


def pr_curve_figure(path: str | Path, curves: list[tuple[str, np.ndarray, np.ndarray]],
                    title: str) -> Path:
    """Precision-recall curves, one line per labeled frame."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(6, 5))
    for name, recall, precision in curves:
        if len(recall):
            ax.plot(recall, precision, lw=1.0, alpha=0.7, label=name)
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.set_xlim(0, 1.02)
    ax.set_ylim(0, 1.02)
    ax.set_title(title)
    if len(curves) <= 12:
        ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def ap_bar_figure(path: str | Path, frame_ids: list[int], aps: list[float],
                  map_value: float, title: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar([str(i) for i in frame_ids], aps, color="steelblue")
    ax.axhline(map_value, color="crimson", ls="--", label=f"mAP = {map_value:.3f}")
    ax.set_xlabel("frame")
    ax.set_ylabel("AP")
    ax.set_ylim(0, 1.05)
    ax.set_title(title)
    ax.legend()
    if len(frame_ids) > 15:
        ax.tick_params(axis="x", labelrotation=90, labelsize=6)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def sweep_figure(path: str | Path, param: str, rows: list[dict],
                 metrics: list[str]) -> Path:
    """Metric-vs-parameter lines for ablation sweeps."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(6, 4))
    xs = [row[param] for row in rows]
    for metric in metrics:
        ys = [row.get(metric) for row in rows]
        if any(y is not None for y in ys):
            ax.plot(xs, ys, marker="o", label=metric)
    ax.set_xlabel(param)
    ax.set_ylabel("value")
    ax.set_title(f"ablation over {param}")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
