"""Training-set export: center-cropped, nearest-neighbor-resampled rasters
plus a JSON manifest carrying the loss weights.

Nearest-neighbor keeps the depth value set intact (no interpolated
artifacts), and the manifest records the crop/scale so classifier scores can
be mapped back onto original rasters.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import dataset
from .core import DatasetError
from .geometry import omega_map

DEFAULT_SIZE = 512


def nearest_indices(src: int, dst: int) -> np.ndarray:
    """Source index per destination pixel; identity when src == dst."""
    return np.minimum((np.arange(dst) + 0.5) * src / dst, src - 1).astype(np.int64)


def center_crop_box(width: int, height: int) -> tuple[int, int, int, int]:
    """(x0, y0, side, side) of the centered square crop."""
    side = min(width, height)
    return (width - side) // 2, (height - side) // 2, side, side


def resample_nearest(raster: np.ndarray, size: int) -> np.ndarray:
    x0, y0, w, h = center_crop_box(raster.shape[1], raster.shape[0])
    cropped = raster[y0 : y0 + h, x0 : x0 + w]
    iy = nearest_indices(h, size)
    ix = nearest_indices(w, size)
    return cropped[np.ix_(iy, ix)]


def export_dataset(dataset_dir: str | Path, out_dir: str | Path,
                   alpha: float = 0.3, beta: float = 0.7,
                   size: int = DEFAULT_SIZE) -> dict:
    """Write per-frame training samples and the manifest; returns the manifest.

    Requires labels/, evidence/, and labels/stats.json from a prior annotate
    run.  gt/ rasters are exported too when present so downstream validation
    can score against them.
    """
    src = Path(dataset_dir)
    out = Path(out_dir)
    seq = dataset.load_sequence(src)

    stats_file = src / "labels" / "stats.json"
    if not stats_file.is_file():
        raise DatasetError(f"missing {stats_file}; run annotate before export")
    with open(stats_file) as fh:
        stats = json.load(fh)
    if "weights" not in stats:
        raise DatasetError("annotation stats carry no class weights")
    counts = stats.get("evidence_counts", {})

    cam = seq.camera
    x0, y0, w, h = center_crop_box(cam.width, cam.height)
    frames_meta = []
    for frame in seq.frames:
        name = dataset.frame_name(frame.frame_id)
        labels = dataset.load_labels(src, frame.frame_id)
        ev_v, ev_b, ev_e = dataset.load_evidence_flags(src, frame.frame_id)

        omega = omega_map(frame).omega
        dataset.write_png(out / "depth" / f"{name}.png", resample_nearest(frame.depth, size))
        dataset.write_png(
            out / "omega" / f"{name}.png",
            dataset.quantize_confidence(resample_nearest(omega, size)),
        )
        dataset.write_png(out / "labels" / f"{name}.png", resample_nearest(labels.label, size))
        dataset.write_png(
            out / "labels" / f"{name}.conf.png",
            dataset.quantize_confidence(resample_nearest(labels.confidence, size)),
        )
        bits = (
            ev_v.astype(np.uint8) * dataset.EVIDENCE_V
            + ev_b.astype(np.uint8) * dataset.EVIDENCE_B
            + ev_e.astype(np.uint8) * dataset.EVIDENCE_E
        )
        dataset.write_png(out / "evidence" / f"{name}.png", resample_nearest(bits, size))

        entry = {
            "id": frame.frame_id,
            "depth": f"depth/{name}.png",
            "omega": f"omega/{name}.png",
            "label": f"labels/{name}.png",
            "confidence": f"labels/{name}.conf.png",
            "evidence": f"evidence/{name}.png",
        }
        gt_file = src / "gt" / f"{name}.png"
        if gt_file.is_file():
            gt = dataset.load_gt(src, frame.frame_id)
            dataset.write_png(out / "gt" / f"{name}.png", resample_nearest(gt, size))
            entry["gt"] = f"gt/{name}.png"
        frames_meta.append(entry)

    manifest = {
        "size": size,
        "crop": {"x0": x0, "y0": y0, "width": w, "height": h},
        "source_camera": cam.to_dict(),
        "alpha": alpha,
        "beta": beta,
        "weights": stats["weights"],
        "evidence_counts": counts,
        "evidence_bits": {"v": dataset.EVIDENCE_V, "b": dataset.EVIDENCE_B,
                          "e": dataset.EVIDENCE_E},
        "modalities": ["depth", "omega"],
        "omega_scale": 65535,
        "frames": frames_meta,
    }
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return manifest
