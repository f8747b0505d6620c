"""Classical smeared-point detectors used as evaluation baselines."""

from __future__ import annotations

import warnings

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.spatial import cKDTree

from .core import DepthFrame
from .geometry import PointCloud, backproject


def median_filter_scores(depth: np.ndarray, k: int = 5, tau_mm: float = 20.0) -> np.ndarray:
    """Flag pixels whose depth leaves the local median by more than tau.

    Zero-depth pixels are ignored inside the median window and never flagged
    themselves.  Returns a binary {0, 1} score raster.
    """
    if k % 2 == 0 or k < 1:
        raise ValueError("k must be an odd integer >= 1")
    depth = np.asarray(depth, dtype=np.float64)
    measured = depth > 0
    half = k // 2
    padded = np.pad(np.where(measured, depth, np.nan), half, constant_values=np.nan)
    windows = sliding_window_view(padded, (k, k))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)  # all-NaN windows
        med = np.nanmedian(windows.reshape(*depth.shape, k * k), axis=-1)
    scores = np.zeros(depth.shape)
    ok = measured & np.isfinite(med)
    scores[ok] = (np.abs(depth[ok] - med[ok]) > tau_mm).astype(float)
    return scores


def statistical_outlier_scores(cloud: PointCloud, n_neighbors: int = 20,
                               std_ratio: float = 2.0) -> np.ndarray:
    """Per-point outlier flags from mean k-neighbor distances.

    A point is an outlier when its mean distance to the n nearest neighbors
    exceeds the corpus mean by std_ratio standard deviations.
    """
    if n_neighbors < 1:
        raise ValueError("n_neighbors must be >= 1")
    if len(cloud) < n_neighbors + 1:
        raise ValueError(
            f"cloud of {len(cloud)} points is smaller than n_neighbors+1"
        )
    tree = cKDTree(cloud.points)
    dist, _ = tree.query(cloud.points, k=n_neighbors + 1)
    mean_dist = dist[:, 1:].mean(axis=1)
    cutoff = mean_dist.mean() + std_ratio * mean_dist.std()
    return (mean_dist > cutoff).astype(float)


def statistical_outlier_raster(frame: DepthFrame, n_neighbors: int = 20,
                               std_ratio: float = 2.0) -> np.ndarray:
    """Per-pixel statistical-filter scores for one frame's cloud."""
    cloud = backproject(frame, world=False)
    flags = statistical_outlier_scores(cloud, n_neighbors, std_ratio)
    raster = np.zeros(frame.depth.shape)
    raster[cloud.source_pixel[:, 2], cloud.source_pixel[:, 1]] = flags
    return raster
