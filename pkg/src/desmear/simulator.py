"""Synthetic-scene oracle.

Ray-casts analytic primitives (plane, sphere, box) along a known trajectory,
then corrupts pixels near depth discontinuities by interpolating between the
local foreground and background depth — the mechanism that produces smeared
points on real sensors.  Ground-truth smear masks and exact poses come out
alongside the depth frames, so every annotator claim can be checked against
a known answer.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .core import (
    LABEL_SMEARED,
    LABEL_UNKNOWN,
    LABEL_VALID,
    CameraModel,
    DepthFrame,
    LabelMap,
    RigidPose,
    SceneSequence,
)
from . import dataset

_NEAR_CLIP_MM = 1.0


@dataclass(frozen=True)
class Primitive:
    """One analytic solid: kind in {plane, sphere, box}.

    plane: local z=0 rectangle of full extent size=(sx, sy); size=None is
    an unbounded plane.  sphere: size=(radius,).  box: size=(sx, sy, sz)
    full extents, axis-aligned in its local frame.
    """

    kind: str
    pose: RigidPose
    size: tuple[float, ...] | None

    def __post_init__(self):
        if self.kind not in ("plane", "sphere", "box"):
            raise ValueError(f"unknown primitive kind {self.kind!r}")
        if self.kind == "sphere" and (self.size is None or len(self.size) != 1):
            raise ValueError("sphere needs size=(radius,)")
        if self.kind == "box" and (self.size is None or len(self.size) != 3):
            raise ValueError("box needs size=(sx, sy, sz)")
        if self.kind == "plane" and self.size is not None and len(self.size) != 2:
            raise ValueError("plane size must be (sx, sy) or None")

    def raycast(self, origins: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        """Smallest ray parameter s > 0 per ray, inf for misses.

        origins (3,) shared, dirs (N, 3) need not be normalized; s is in
        units of |dir| so callers using z-scaled directions read depth off
        s directly.
        """
        inv = self.pose.inverse()
        o = inv.apply(origins.reshape(1, 3))[0]
        d = dirs @ inv.rotation.T
        if self.kind == "plane":
            return self._raycast_plane(o, d)
        if self.kind == "sphere":
            return self._raycast_sphere(o, d)
        return self._raycast_box(o, d)

    def _raycast_plane(self, o, d):
        s = np.full(len(d), np.inf)
        dz = d[:, 2]
        hit = np.abs(dz) > 1e-12
        s_hit = -o[2] / np.where(hit, dz, 1.0)
        ok = hit & (s_hit > 0)
        if self.size is not None:
            x = o[0] + s_hit * d[:, 0]
            y = o[1] + s_hit * d[:, 1]
            ok &= (np.abs(x) <= self.size[0] / 2) & (np.abs(y) <= self.size[1] / 2)
        s[ok] = s_hit[ok]
        return s

    def _raycast_sphere(self, o, d):
        r = self.size[0]
        a = np.einsum("ij,ij->i", d, d)
        b = 2.0 * d @ o
        c = o @ o - r * r
        disc = b * b - 4 * a * c
        s = np.full(len(d), np.inf)
        ok = disc >= 0
        sq = np.sqrt(np.where(ok, disc, 0.0))
        s1 = (-b - sq) / (2 * a)
        s2 = (-b + sq) / (2 * a)
        near = np.where(s1 > 0, s1, s2)
        ok &= near > 0
        s[ok] = near[ok]
        return s

    def _raycast_box(self, o, d):
        half = np.asarray(self.size) / 2.0
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (-half - o) / d
            t2 = (half - o) / d
        lo = np.minimum(t1, t2)
        hi = np.maximum(t1, t2)
        # Rays parallel to a slab: inside -> (-inf, inf), outside -> miss.
        par = np.abs(d) < 1e-12
        inside = np.abs(o) <= half
        lo = np.where(par, np.where(inside, -np.inf, np.inf), lo)
        hi = np.where(par, np.where(inside, np.inf, -np.inf), hi)
        tmin = lo.max(axis=1)
        tmax = hi.min(axis=1)
        s = np.full(len(d), np.inf)
        ok = (tmax >= tmin) & (tmax > 0)
        near = np.where(tmin > 0, tmin, tmax)
        s[ok] = near[ok]
        return s


@dataclass(frozen=True)
class SmearModel:
    """Depth-interpolation corruption at discontinuity bands.

    edge_band_px: Chebyshev radius around a depth jump that may smear.
    rate: per-pixel corruption probability q.
    lam: (lo, hi) of the uniform foreground weight; lo == hi pins lambda.
    lam_smooth_px: spatial correlation scale of the lambda field; 0 draws
        lambda i.i.d. per pixel, larger values produce the coherent veils
        real sensors smear between surfaces (marginals stay uniform either
        way via rank normalization).
    min_jump_mm: neighbor depth difference that counts as a discontinuity.
    """

    edge_band_px: int = 2
    rate: float = 0.5
    lam: tuple[float, float] = (0.0, 1.0)
    lam_smooth_px: float = 0.0
    min_jump_mm: float = 100.0

    def __post_init__(self):
        if not 0.0 <= self.rate <= 1.0:
            raise ValueError("rate must be in [0, 1]")
        if not (0.0 <= self.lam[0] <= self.lam[1] <= 1.0):
            raise ValueError("lambda bounds must satisfy 0 <= lo <= hi <= 1")
        if self.edge_band_px < 1:
            raise ValueError("edge_band_px must be >= 1")
        if self.lam_smooth_px < 0:
            raise ValueError("lam_smooth_px must be >= 0")


@dataclass(frozen=True)
class SyntheticScene:
    primitives: tuple[Primitive, ...]
    trajectory: tuple[RigidPose, ...]
    noise_sigma_mm: float = 0.0
    smear: SmearModel = field(default_factory=SmearModel)
    seed: int = 0

    def __post_init__(self):
        if len(self.primitives) < 1:
            raise ValueError("scene needs at least one primitive")
        if len(self.trajectory) < 2:
            raise ValueError("trajectory needs at least two poses")


def look_at(eye, target, up=(0.0, -1.0, 0.0)) -> RigidPose:
    """Camera-to-world pose with +z toward target, +y opposing `up`.

    Camera convention: +x right (u), +y down (v), +z forward.
    """
    eye = np.asarray(eye, dtype=float)
    z = np.asarray(target, dtype=float) - eye
    nz = np.linalg.norm(z)
    if nz == 0:
        raise ValueError("eye and target coincide")
    z = z / nz
    down = -np.asarray(up, dtype=float)
    x = np.cross(down, z)
    nx = np.linalg.norm(x)
    if nx < 1e-9:
        raise ValueError("view direction parallel to up vector")
    x = x / nx
    y = np.cross(z, x)
    return RigidPose(np.column_stack([x, y, z]), eye)


def arc_trajectory(n_frames: int, radius_mm: float, arc_deg: float,
                   target=(0.0, 0.0, 0.0), height_mm: float = 0.0) -> tuple[RigidPose, ...]:
    """Poses on a horizontal circular arc, all looking at `target`."""
    if n_frames < 2:
        raise ValueError("an arc needs at least two poses")
    target = np.asarray(target, dtype=float)
    half = math.radians(arc_deg) / 2.0
    poses = []
    for phi in np.linspace(-half, half, n_frames):
        eye = target + np.array(
            [radius_mm * math.sin(phi), height_mm, -radius_mm * math.cos(phi)]
        )
        poses.append(look_at(eye, target))
    return tuple(poses)


def _cast_depth(scene: SyntheticScene, camera: CameraModel, pose: RigidPose) -> np.ndarray:
    uu, vv = np.meshgrid(
        np.arange(camera.width, dtype=np.float64),
        np.arange(camera.height, dtype=np.float64),
    )
    # Direction scaled so the ray parameter equals camera-frame z-depth.
    dirs_cam = np.column_stack(
        [
            ((uu - camera.cx) / camera.fx).ravel(),
            ((vv - camera.cy) / camera.fy).ravel(),
            np.ones(camera.width * camera.height),
        ]
    )
    dirs_world = dirs_cam @ pose.rotation.T
    depth = np.full(len(dirs_world), np.inf)
    for prim in scene.primitives:
        s = prim.raycast(pose.translation, dirs_world)
        depth = np.minimum(depth, np.where(s > _NEAR_CLIP_MM, s, np.inf))
    depth[~np.isfinite(depth)] = 0.0
    return depth.reshape(camera.height, camera.width)


def _inject_smear(depth: np.ndarray, smear: SmearModel,
                  rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Corrupt band pixels toward interpolated depths; returns (depth, mask)."""
    measured = depth > 0
    jump = np.zeros_like(measured)
    for axis in (0, 1):
        d1 = np.diff(depth, axis=axis)
        both = measured[:-1, :] & measured[1:, :] if axis == 0 else measured[:, :-1] & measured[:, 1:]
        big = (np.abs(d1) > smear.min_jump_mm) & both
        if axis == 0:
            jump[:-1, :] |= big
            jump[1:, :] |= big
        else:
            jump[:, :-1] |= big
            jump[:, 1:] |= big

    size = 2 * smear.edge_band_px + 1
    band = ndimage.binary_dilation(jump, structure=np.ones((size, size), dtype=bool))
    band &= measured

    filled = np.where(measured, depth, np.inf)
    local_fg = ndimage.minimum_filter(filled, size=size, mode="constant", cval=np.inf)
    filled_lo = np.where(measured, depth, -np.inf)
    local_bg = ndimage.maximum_filter(filled_lo, size=size, mode="constant", cval=-np.inf)
    band &= np.isfinite(local_fg) & np.isfinite(local_bg)
    band &= (local_bg - local_fg) > smear.min_jump_mm

    coin = rng.random(depth.shape) < smear.rate
    if smear.lam_smooth_px > 0:
        # Correlated lambda field with exactly uniform marginals: blur white
        # noise, then rank-normalize.
        field = ndimage.gaussian_filter(rng.normal(size=depth.shape), smear.lam_smooth_px)
        ranks = np.argsort(np.argsort(field.ravel())).reshape(depth.shape)
        unit = (ranks + 0.5) / ranks.size
        lam = smear.lam[0] + (smear.lam[1] - smear.lam[0]) * unit
    else:
        lam = rng.uniform(smear.lam[0], smear.lam[1], size=depth.shape)
    hit = band & coin
    out = depth.copy()
    out[hit] = lam[hit] * local_fg[hit] + (1.0 - lam[hit]) * local_bg[hit]
    return out, hit


def render_scene(scene: SyntheticScene, camera: CameraModel) -> tuple[SceneSequence, list[np.ndarray]]:
    """Render every trajectory pose to a posed sequence plus gt masks.

    Masks use the ternary label encoding: 0 no measurement, 1 valid,
    2 smeared.  Deterministic for a given scene seed.
    """
    rng = np.random.default_rng(scene.seed)
    frames = []
    masks = []
    for i, pose in enumerate(scene.trajectory):
        depth = _cast_depth(scene, camera, pose)
        depth, smeared = _inject_smear(depth, scene.smear, rng)
        if scene.noise_sigma_mm > 0:
            noisy = depth + rng.normal(0.0, scene.noise_sigma_mm, size=depth.shape)
            depth = np.where(depth > 0, np.maximum(noisy, 1.0), 0.0)
        mask = np.full(depth.shape, LABEL_UNKNOWN, dtype=np.uint8)
        mask[depth > 0] = LABEL_VALID
        mask[smeared] = LABEL_SMEARED
        depth = np.round(depth).astype(np.uint16)  # sensor-format quantization
        frames.append(DepthFrame(frame_id=i, depth=depth, camera=camera, pose=pose))
        masks.append(mask)
    seq = SceneSequence(tuple(frames), {"source": "simulator", "seed": scene.seed})
    return seq, masks


def evaluate_against_truth(labels: LabelMap, mask: np.ndarray) -> dict:
    """Per-class precision/recall of a label map against a gt mask.

    Pixels the ground truth marks unknown are dropped entirely; pixels the
    prediction leaves unknown count against recall but never enter any
    precision denominator.  Absent denominators yield None.
    """
    mask = np.asarray(mask)
    if mask.shape != labels.shape:
        raise ValueError(f"dimension mismatch: labels {labels.shape} vs mask {mask.shape}")
    known = mask != LABEL_UNKNOWN
    pred = labels.label
    out = {}
    for name, cls in (("valid", LABEL_VALID), ("smeared", LABEL_SMEARED)):
        tp = int(np.sum(known & (pred == cls) & (mask == cls)))
        n_pred = int(np.sum(known & (pred == cls)))
        n_true = int(np.sum(mask == cls))
        out[f"{name}_precision"] = tp / n_pred if n_pred else None
        out[f"{name}_recall"] = tp / n_true if n_true else None
        out[f"{name}_predicted"] = n_pred
        out[f"{name}_true"] = n_true
    return out


# ---------------------------------------------------------------------------
# Scene configuration files


def default_scene_config() -> dict:
    """Box floating in front of a large backdrop, 30-frame arc."""
    return {
        "seed": 0,
        "camera": {"fx": 160.0, "fy": 160.0, "cx": 80.0, "cy": 80.0,
                   "width": 160, "height": 160, "depth_unit": "mm"},
        "noise_sigma_mm": 0.0,
        "smear": {"edge_band_px": 2, "rate": 0.5, "lam": [0.0, 1.0],
                  "min_jump_mm": 100.0},
        "primitives": [
            {"kind": "box", "center": [0.0, 0.0, 0.0], "size": [400.0, 400.0, 300.0]},
            {"kind": "plane", "center": [0.0, 0.0, 1200.0], "size": [5400.0, 5400.0]},
        ],
        "trajectory": {"kind": "arc", "radius_mm": 1500.0, "arc_deg": 90.0,
                       "frames": 30, "height_mm": 0.0},
    }


def _primitive_from_dict(d: dict) -> Primitive:
    kind = d["kind"]
    rot = np.array(d["rotation"], dtype=float).reshape(3, 3) if "rotation" in d else np.eye(3)
    pose = RigidPose(rot, np.array(d.get("center", [0.0, 0.0, 0.0]), dtype=float))
    if kind == "sphere":
        size = (float(d["radius"]),)
    elif "size" in d and d["size"] is not None:
        size = tuple(float(x) for x in d["size"])
    else:
        size = None
    return Primitive(kind=kind, pose=pose, size=size)


def scene_from_config(config: dict) -> tuple[SyntheticScene, CameraModel]:
    camera = CameraModel.from_dict(config["camera"])
    primitives = tuple(_primitive_from_dict(p) for p in config["primitives"])
    traj_cfg = config["trajectory"]
    if traj_cfg["kind"] == "arc":
        trajectory = arc_trajectory(
            n_frames=int(traj_cfg["frames"]),
            radius_mm=float(traj_cfg["radius_mm"]),
            arc_deg=float(traj_cfg["arc_deg"]),
            target=traj_cfg.get("target", (0.0, 0.0, 0.0)),
            height_mm=float(traj_cfg.get("height_mm", 0.0)),
        )
    elif traj_cfg["kind"] == "poses":
        trajectory = tuple(RigidPose.from_dict(p) for p in traj_cfg["poses"])
    else:
        raise ValueError(f"unknown trajectory kind {traj_cfg['kind']!r}")
    smear_cfg = config.get("smear", {})
    smear = SmearModel(
        edge_band_px=int(smear_cfg.get("edge_band_px", 2)),
        rate=float(smear_cfg.get("rate", 0.5)),
        lam=tuple(smear_cfg.get("lam", (0.0, 1.0))),
        lam_smooth_px=float(smear_cfg.get("lam_smooth_px", 0.0)),
        min_jump_mm=float(smear_cfg.get("min_jump_mm", 100.0)),
    )
    scene = SyntheticScene(
        primitives=primitives,
        trajectory=trajectory,
        noise_sigma_mm=float(config.get("noise_sigma_mm", 0.0)),
        smear=smear,
        seed=int(config.get("seed", 0)),
    )
    return scene, camera


def write_scene_dataset(config: dict, out_dir: str | Path) -> Path:
    """Render a scene config and write the full dataset directory."""
    scene, camera = scene_from_config(config)
    seq, masks = render_scene(scene, camera)
    root = dataset.write_sequence(seq, out_dir)
    for frame, mask in zip(seq.frames, masks):
        dataset.save_gt(root, frame.frame_id, mask)
    with open(root / "scene.json", "w") as fh:
        json.dump(config, fh, indent=2, sort_keys=True)
    return root
