"""On-disk dataset layout.

A dataset directory holds::

    intrinsics.json          fx, fy, cx, cy, width, height, depth_unit
    depth/NNNNNN.png         16-bit single-channel depth, millimeters
    poses/NNNNNN.json        optional camera-to-world poses
    gt/NNNNNN.png            optional ground-truth ternary labels
    labels/NNNNNN.png        annotator output labels
    labels/NNNNNN.conf.png   annotator confidence, 16-bit quantized
    evidence/NNNNNN.png      raw evidence bit flags (bit0 v, bit1 b, bit2 e)
    scores/NNNNNN.png        classifier scores, 16-bit quantized
    scene.json               simulator parameters + seed (synthetic sets only)

Frame numbers are zero-padded to six digits.
"""

from __future__ import annotations

import json
import re
from pathlib import Path

import numpy as np
from PIL import Image

from .core import (
    CONF_SCALE,
    CameraModel,
    DatasetError,
    DepthFrame,
    LabelMap,
    RigidPose,
    SceneSequence,
)

INTRINSICS_FILE = "intrinsics.json"
EVIDENCE_V = 1
EVIDENCE_B = 2
EVIDENCE_E = 4

_FRAME_RE = re.compile(r"^(\d{6})\.png$")


def frame_name(frame_id: int) -> str:
    return f"{frame_id:06d}"


def write_png(path: Path, raster: np.ndarray) -> None:
    raster = np.asarray(raster)
    if raster.dtype not in (np.uint8, np.uint16):
        raise ValueError(f"rasters are stored as uint8/uint16, got {raster.dtype}")
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(raster).save(path, format="PNG")


def read_png(path: Path) -> np.ndarray:
    with Image.open(path) as img:
        arr = np.asarray(img)
    if arr.dtype == np.int32:  # Pillow decodes some 16-bit PNGs as mode "I"
        arr = arr.astype(np.uint16)
    return arr


def quantize_confidence(conf: np.ndarray) -> np.ndarray:
    return np.round(np.clip(conf, 0.0, 1.0) * CONF_SCALE).astype(np.uint16)


def dequantize_confidence(raw: np.ndarray) -> np.ndarray:
    return raw.astype(np.float64) / CONF_SCALE


def list_frame_ids(directory: Path) -> list[int]:
    ids = []
    for p in directory.iterdir():
        m = _FRAME_RE.match(p.name)
        if m:
            ids.append(int(m.group(1)))
    return sorted(ids)


def load_sequence(path: str | Path) -> SceneSequence:
    """Load a dataset directory into a SceneSequence.

    Frames come back in id order with poses attached when pose files exist.
    Raises DatasetError for a missing intrinsics manifest, raster dimension
    mismatches, or malformed pose files; nothing partial is ever returned.
    """
    root = Path(path)
    intr = root / INTRINSICS_FILE
    if not intr.is_file():
        raise DatasetError(f"missing intrinsics manifest {intr}")
    with open(intr) as fh:
        camera = CameraModel.from_dict(json.load(fh))

    depth_dir = root / "depth"
    if not depth_dir.is_dir():
        raise DatasetError(f"missing depth directory {depth_dir}")
    ids = list_frame_ids(depth_dir)
    if not ids:
        raise DatasetError(f"no depth frames found in {depth_dir}")

    manifest = {}
    manifest_file = root / "manifest.json"
    if manifest_file.is_file():
        with open(manifest_file) as fh:
            manifest = json.load(fh)

    frames = []
    for fid in ids:
        depth = read_png(depth_dir / f"{frame_name(fid)}.png")
        if depth.dtype != np.uint16:
            raise DatasetError(f"depth frame {fid} is not 16-bit")
        if depth.shape != (camera.height, camera.width):
            raise DatasetError(
                f"dimension mismatch: frame {fid} has {depth.shape}, "
                f"intrinsics say ({camera.height}, {camera.width})"
            )
        pose = None
        pose_file = root / "poses" / f"{frame_name(fid)}.json"
        if pose_file.is_file():
            try:
                with open(pose_file) as fh:
                    pose = RigidPose.from_dict(json.load(fh))
            except (KeyError, ValueError, DatasetError, json.JSONDecodeError) as exc:
                raise DatasetError(f"malformed pose file {pose_file}: {exc}") from exc
        frames.append(DepthFrame(frame_id=fid, depth=depth, camera=camera, pose=pose))

    return SceneSequence(tuple(frames), manifest)


def write_sequence(seq: SceneSequence, path: str | Path, write_poses: bool = True) -> Path:
    """Write a sequence as a dataset directory (depth + intrinsics + poses)."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    with open(root / INTRINSICS_FILE, "w") as fh:
        json.dump(seq.camera.to_dict(), fh, indent=2, sort_keys=True)
    if seq.manifest:
        with open(root / "manifest.json", "w") as fh:
            json.dump(seq.manifest, fh, indent=2, sort_keys=True)
    for frame in seq.frames:
        depth = frame.depth
        if depth.dtype != np.uint16:
            depth = np.round(depth).astype(np.uint16)
        write_png(root / "depth" / f"{frame_name(frame.frame_id)}.png", depth)
        if write_poses and frame.pose is not None:
            write_pose(root, frame.frame_id, frame.pose)
    return root


def write_pose(root: str | Path, frame_id: int, pose: RigidPose) -> Path:
    path = Path(root) / "poses" / f"{frame_name(frame_id)}.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(pose.to_dict(), fh, indent=2, sort_keys=True)
    return path


def save_labels(labels: LabelMap, root: str | Path, frame_id: int) -> None:
    """Write one frame's label + confidence rasters under labels/."""
    root = Path(root)
    name = frame_name(frame_id)
    write_png(root / "labels" / f"{name}.png", labels.label)
    write_png(root / "labels" / f"{name}.conf.png", quantize_confidence(labels.confidence))


def load_labels(root: str | Path, frame_id: int) -> LabelMap:
    root = Path(root)
    name = frame_name(frame_id)
    label = read_png(root / "labels" / f"{name}.png")
    conf = dequantize_confidence(read_png(root / "labels" / f"{name}.conf.png"))
    return LabelMap(label, conf)


def save_evidence_flags(root: str | Path, frame_id: int, v: np.ndarray, b: np.ndarray,
                        e: np.ndarray) -> None:
    bits = (
        v.astype(np.uint8) * EVIDENCE_V
        + b.astype(np.uint8) * EVIDENCE_B
        + e.astype(np.uint8) * EVIDENCE_E
    )
    write_png(Path(root) / "evidence" / f"{frame_name(frame_id)}.png", bits)


def load_evidence_flags(root: str | Path, frame_id: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    bits = read_png(Path(root) / "evidence" / f"{frame_name(frame_id)}.png")
    return (
        (bits & EVIDENCE_V) > 0,
        (bits & EVIDENCE_B) > 0,
        (bits & EVIDENCE_E) > 0,
    )


def save_gt(root: str | Path, frame_id: int, gt: np.ndarray) -> None:
    write_png(Path(root) / "gt" / f"{frame_name(frame_id)}.png", gt.astype(np.uint8))


def load_gt(root: str | Path, frame_id: int) -> np.ndarray:
    return read_png(Path(root) / "gt" / f"{frame_name(frame_id)}.png")


def save_scores(root: str | Path, frame_id: int, scores: np.ndarray) -> None:
    write_png(Path(root) / "scores" / f"{frame_name(frame_id)}.png", quantize_confidence(scores))


def load_scores(root: str | Path, frame_id: int) -> np.ndarray:
    return dequantize_confidence(read_png(Path(root) / "scores" / f"{frame_name(frame_id)}.png"))
