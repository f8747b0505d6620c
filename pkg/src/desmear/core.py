"""Domain types shared by every pipeline stage.

All geometry is metric millimeters.  Depth rasters store z-depth along the
optical axis as uint16 millimeters with 0 meaning "no measurement".  Poses
map camera coordinates to world coordinates (camera-to-world).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

LABEL_UNKNOWN = 0
LABEL_VALID = 1
LABEL_SMEARED = 2

# Confidence rasters are stored as 16-bit PNG, quantized to this scale.
CONF_SCALE = 65535


class DatasetError(Exception):
    """Malformed or inconsistent dataset contents."""


class DegenerateGeometryError(Exception):
    """Geometry too poor to solve (e.g. not enough ICP correspondences)."""


@dataclass(frozen=True)
class CameraModel:
    """Pinhole intrinsics; pixel (u, v) has u along width, v along height."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"focal lengths must be positive, got fx={self.fx} fy={self.fy}")
        if not (0 < self.cx < self.width):
            raise ValueError(f"cx={self.cx} outside (0, {self.width})")
        if not (0 < self.cy < self.height):
            raise ValueError(f"cy={self.cy} outside (0, {self.height})")

    @property
    def k_matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    def to_dict(self) -> dict:
        return {
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "width": self.width,
            "height": self.height,
            "depth_unit": "mm",
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraModel":
        unit = d.get("depth_unit", "mm")
        if unit != "mm":
            raise DatasetError(f"unsupported depth unit {unit!r}, expected 'mm'")
        return cls(
            fx=float(d["fx"]),
            fy=float(d["fy"]),
            cx=float(d["cx"]),
            cy=float(d["cy"]),
            width=int(d["width"]),
            height=int(d["height"]),
        )


_ORTHO_TOL = 1e-9


@dataclass(frozen=True)
class RigidPose:
    """SE(3) camera-to-world transform. rotation is 3x3, translation in mm."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=float)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if r.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {r.shape}")
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-8):
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > 1e-8:
            raise ValueError("rotation determinant is not +1")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidPose":
        return cls(np.eye(3), np.zeros(3))

    def compose(self, other: "RigidPose") -> "RigidPose":
        """self o other: apply `other` first, then `self`."""
        return RigidPose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "RigidPose":
        rt = self.rotation.T
        return RigidPose(rt, -rt @ self.translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform an (N, 3) array of points."""
        pts = np.asarray(points, dtype=float)
        return pts @ self.rotation.T + self.translation

    def to_dict(self) -> dict:
        return {
            "rotation": [float(x) for x in self.rotation.reshape(-1)],
            "translation": [float(x) for x in self.translation],
            "convention": "camera_to_world",
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RigidPose":
        conv = d.get("convention", "camera_to_world")
        if conv != "camera_to_world":
            raise DatasetError(f"unsupported pose convention {conv!r}")
        rot = np.array(d["rotation"], dtype=float)
        if rot.size != 9:
            raise DatasetError("pose rotation must have 9 entries (row-major)")
        return cls(rot.reshape(3, 3), np.array(d["translation"], dtype=float))


@dataclass(frozen=True)
class DepthFrame:
    """One sensor frame: depth raster in mm plus intrinsics and pose.

    Sensor data is uint16 millimeters (the on-disk format); float rasters
    are accepted unquantized for synthetic oracles and must stay within the
    16-bit millimeter range.
    """

    frame_id: int
    depth: np.ndarray
    camera: CameraModel
    pose: RigidPose | None = None

    def __post_init__(self):
        d = np.asarray(self.depth)
        if d.ndim != 2:
            raise ValueError(f"depth must be 2-D, got shape {d.shape}")
        if d.shape != (self.camera.height, self.camera.width):
            raise DatasetError(
                f"dimension mismatch: depth {d.shape} vs camera "
                f"({self.camera.height}, {self.camera.width})"
            )
        if d.dtype != np.uint16:
            if not np.isfinite(d).all():
                raise ValueError("depth values must be finite")
            if (d < 0).any():
                raise ValueError("depth values must be >= 0")
            if (d > 65535).any():
                raise ValueError("depth exceeds the 16-bit millimeter range")
            if np.issubdtype(d.dtype, np.floating):
                d = d.astype(np.float64)
            else:
                d = d.astype(np.uint16)
        object.__setattr__(self, "depth", d)

    @property
    def valid_mask(self) -> np.ndarray:
        return self.depth > 0

    def with_pose(self, pose: RigidPose | None) -> "DepthFrame":
        return replace(self, pose=pose)


@dataclass(frozen=True)
class SceneSequence:
    """Ordered frames from one rigid scene, sharing a single camera model."""

    frames: tuple[DepthFrame, ...]
    manifest: dict = field(default_factory=dict)

    def __post_init__(self):
        frames = tuple(self.frames)
        if not frames:
            raise ValueError("sequence must contain at least one frame")
        ids = [f.frame_id for f in frames]
        if any(b <= a for a, b in zip(ids, ids[1:])):
            raise ValueError(f"frame_ids must be strictly increasing, got {ids}")
        cam0 = frames[0].camera
        for f in frames[1:]:
            if f.camera != cam0:
                raise ValueError("all frames must share one camera model")
        object.__setattr__(self, "frames", frames)

    def __len__(self) -> int:
        return len(self.frames)

    def __getitem__(self, i: int) -> DepthFrame:
        return self.frames[i]

    @property
    def camera(self) -> CameraModel:
        return self.frames[0].camera

    @property
    def is_posed(self) -> bool:
        return all(f.pose is not None for f in self.frames)

    def with_poses(self, poses: list[RigidPose]) -> "SceneSequence":
        if len(poses) != len(self.frames):
            raise ValueError("pose count must match frame count")
        return SceneSequence(
            tuple(f.with_pose(p) for f, p in zip(self.frames, poses)),
            dict(self.manifest),
        )


class EvidenceMap:
    """Per-pixel multi-view evidence for one target frame.

    v/b/e are boolean rasters (valid, see-through-behind, see-through-empty),
    c holds the valid-pixel confidence in [0, 1].  e_margin records, per
    e-flagged pixel, the largest window half-width for which the reference
    neighborhood around its projection was entirely empty (-1 elsewhere); it
    lets the empty-evidence filter run without re-projecting.
    """

    def __init__(self, shape: tuple[int, int]):
        self.v = np.zeros(shape, dtype=bool)
        self.b = np.zeros(shape, dtype=bool)
        self.e = np.zeros(shape, dtype=bool)
        self.c = np.zeros(shape, dtype=np.float64)
        self.e_margin = np.full(shape, -1, dtype=np.int32)

    @property
    def shape(self) -> tuple[int, int]:
        return self.v.shape

    def copy(self) -> "EvidenceMap":
        out = EvidenceMap(self.shape)
        out.v = self.v.copy()
        out.b = self.b.copy()
        out.e = self.e.copy()
        out.c = self.c.copy()
        out.e_margin = self.e_margin.copy()
        return out

    def validate(self) -> None:
        if not (self.c >= 0).all() or not (self.c <= 1).all():
            raise ValueError("confidence must lie in [0, 1]")
        if (self.c[~self.v] > 0).any():
            raise ValueError("confidence must be 0 where v = 0")
        shapes = {self.v.shape, self.b.shape, self.e.shape, self.c.shape, self.e_margin.shape}
        if len(shapes) != 1:
            raise ValueError("evidence rasters must share one shape")


class LabelMap:
    """Ternary labels {0 unknown, 1 valid, 2 smeared} with per-pixel confidence."""

    def __init__(self, label: np.ndarray, confidence: np.ndarray):
        label = np.asarray(label, dtype=np.uint8)
        confidence = np.asarray(confidence, dtype=np.float64)
        if label.shape != confidence.shape:
            raise ValueError("label and confidence shapes differ")
        if label.max(initial=0) > LABEL_SMEARED:
            raise ValueError("labels must be in {0, 1, 2}")
        if (confidence[label == LABEL_UNKNOWN] != 0).any():
            raise ValueError("confidence must be 0 where label is unknown")
        if (confidence < 0).any() or (confidence > 1).any():
            raise ValueError("confidence must lie in [0, 1]")
        self.label = label
        self.confidence = confidence

    @property
    def shape(self) -> tuple[int, int]:
        return self.label.shape

    @classmethod
    def empty(cls, shape: tuple[int, int]) -> "LabelMap":
        return cls(np.zeros(shape, dtype=np.uint8), np.zeros(shape))

    def __eq__(self, other) -> bool:
        if not isinstance(other, LabelMap):
            return NotImplemented
        return bool(
            np.array_equal(self.label, other.label)
            and np.array_equal(self.confidence, other.confidence)
        )


@dataclass(frozen=True)
class AnnotatorConfig:
    """Thresholds and window sizes for evidence gathering and label fusion.

    epsilon_mm: depth agreement tolerance for valid evidence.
    delta_mm: margin a reference measurement must lie behind a candidate
        before see-through-behind fires.
    window: odd sliding-window size filtering see-through-empty evidence
        (1 disables the filter).
    m: number of reference frames per target (m//2 on each side).
    alpha/beta: smeared/valid loss weights carried through to export.
    """

    epsilon_mm: float = 4.0
    delta_mm: float = 15.0
    window: int = 3
    m: int = 4
    alpha: float = 0.3
    beta: float = 0.7

    def __post_init__(self):
        if self.epsilon_mm <= 0:
            raise ValueError("epsilon_mm must be > 0")
        if self.delta_mm <= self.epsilon_mm:
            raise ValueError("delta_mm must exceed epsilon_mm")
        if self.window < 1 or self.window % 2 == 0:
            raise ValueError("window must be an odd integer >= 1")
        if self.m < 2 or self.m % 2 == 1:
            raise ValueError("m must be an even integer >= 2")
