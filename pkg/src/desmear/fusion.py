"""Multi-frame point-cloud fusion with optional per-frame preprocessing."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .core import LABEL_VALID, LabelMap, SceneSequence
from .baselines import median_filter_scores
from .geometry import PointCloud, backproject

FILTERS = ("none", "median", "labels")


def write_ply(path: str | Path, cloud: PointCloud, binary: bool = True) -> Path:
    """Write points as PLY, binary little-endian or ASCII."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pts = cloud.points.astype("<f4")
    fmt = "binary_little_endian" if binary else "ascii"
    header = (
        "ply\n"
        f"format {fmt} 1.0\n"
        f"element vertex {len(pts)}\n"
        "property float x\n"
        "property float y\n"
        "property float z\n"
        "end_header\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        if binary:
            fh.write(pts.tobytes())
        else:
            for x, y, z in pts:
                fh.write(f"{x:.6f} {y:.6f} {z:.6f}\n".encode("ascii"))
    return path


def read_ply(path: str | Path) -> np.ndarray:
    """Read x/y/z vertices from PLY files produced by write_ply."""
    with open(path, "rb") as fh:
        header = []
        while True:
            line = fh.readline().decode("ascii").strip()
            header.append(line)
            if line == "end_header":
                break
        fmt = next(l.split()[1] for l in header if l.startswith("format"))
        count = int(next(l.split()[2] for l in header if l.startswith("element vertex")))
        if fmt == "binary_little_endian":
            data = fh.read(count * 12)
            return np.frombuffer(data, dtype="<f4").reshape(count, 3).astype(np.float64)
        rows = [fh.readline().split()[:3] for _ in range(count)]
        return np.array(rows, dtype=np.float64)


def fuse_sequence(seq: SceneSequence, filter_kind: str = "none",
                  labels: list[LabelMap] | None = None,
                  median_k: int = 5, median_tau_mm: float = 20.0) -> PointCloud:
    """Merge all frames into one world cloud after per-frame filtering.

    filter_kind: none keeps everything; median drops pixels the median
    detector flags; labels keeps only pixels labeled valid (smeared and
    unlabeled pixels are both too unreliable for a fused model).
    """
    if filter_kind not in FILTERS:
        raise ValueError(f"filter must be one of {FILTERS}")
    if filter_kind == "labels":
        if labels is None or len(labels) != len(seq):
            raise ValueError("labels filter needs one LabelMap per frame")
    if not seq.is_posed:
        from .core import DatasetError

        raise DatasetError("fusion requires a posed sequence")

    parts = []
    for i, frame in enumerate(seq.frames):
        cloud = backproject(frame, world=True)
        if filter_kind == "median":
            scores = median_filter_scores(frame.depth, k=median_k, tau_mm=median_tau_mm)
            keep = scores[cloud.source_pixel[:, 2], cloud.source_pixel[:, 1]] < 0.5
            cloud = cloud.select(keep)
        elif filter_kind == "labels":
            lab = labels[i].label
            keep = lab[cloud.source_pixel[:, 2], cloud.source_pixel[:, 1]] == LABEL_VALID
            cloud = cloud.select(keep)
        parts.append(cloud)
    points = np.vstack([c.points for c in parts])
    src = np.vstack([c.source_pixel for c in parts])
    return PointCloud(points, src)
