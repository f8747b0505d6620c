"""Average-precision evaluation with the smeared class as positive."""

from __future__ import annotations

import logging

import numpy as np

from .core import LABEL_SMEARED, LABEL_UNKNOWN, LABEL_VALID, LabelMap

logger = logging.getLogger(__name__)


def average_precision(scores: np.ndarray, gt: np.ndarray) -> float | None:
    """AP over one frame: smeared positive, valid negative, unknown dropped.

    Exact integral of the PR staircase: precision/recall are evaluated once
    per distinct score threshold and summed against the recall increments,
    so any strictly monotone rescoring leaves the result unchanged.
    Returns None when the frame has no positive pixels.
    """
    scores = np.asarray(scores, dtype=np.float64)
    gt = np.asarray(gt)
    if scores.shape != gt.shape:
        raise ValueError(f"dimension mismatch: scores {scores.shape} vs gt {gt.shape}")
    keep = gt != LABEL_UNKNOWN
    s = scores[keep].ravel()
    y = (gt[keep] == LABEL_SMEARED).ravel()
    n_pos = int(y.sum())
    if n_pos == 0:
        return None

    order = np.argsort(-s, kind="stable")
    y_sorted = y[order]
    s_sorted = s[order]
    tp = np.cumsum(y_sorted)
    ranks = np.arange(1, len(s_sorted) + 1)
    block_end = np.nonzero(np.diff(s_sorted))[0]
    ends = np.append(block_end, len(s_sorted) - 1)
    precision = tp[ends] / ranks[ends]
    recall = tp[ends] / n_pos
    prev_recall = np.concatenate([[0.0], recall[:-1]])
    return float(np.sum((recall - prev_recall) * precision))


def mean_average_precision(score_rasters, gt_rasters) -> dict:
    """Unweighted mean AP over frames; positive-free frames are skipped."""
    per_frame = []
    skipped = []
    for i, (scores, gt) in enumerate(zip(score_rasters, gt_rasters)):
        ap = average_precision(scores, gt)
        if ap is None:
            logger.warning("frame %d has no positive pixels; excluded from mAP", i)
            skipped.append(i)
        else:
            per_frame.append({"frame": i, "ap": ap})
    if not per_frame:
        raise ValueError("no frame with positive pixels; mAP undefined")
    values = [f["ap"] for f in per_frame]
    return {
        "per_frame": per_frame,
        "skipped_frames": skipped,
        "map": float(np.mean(values)),
    }


def confusion_at_threshold(scores: np.ndarray, gt: np.ndarray,
                           threshold: float = 0.5) -> dict:
    """Smeared-positive confusion counts at a fixed score threshold."""
    keep = gt != LABEL_UNKNOWN
    pred = np.asarray(scores)[keep] >= threshold
    pos = gt[keep] == LABEL_SMEARED
    return {
        "threshold": threshold,
        "tp": int(np.sum(pred & pos)),
        "fp": int(np.sum(pred & ~pos)),
        "fn": int(np.sum(~pred & pos)),
        "tn": int(np.sum(~pred & ~pos)),
    }


def labels_to_scores(labels: LabelMap) -> np.ndarray:
    """Hard labels as a detector score: smeared 1, unknown 0.5, valid 0."""
    scores = np.full(labels.shape, 0.5)
    scores[labels.label == LABEL_SMEARED] = 1.0
    scores[labels.label == LABEL_VALID] = 0.0
    return scores
