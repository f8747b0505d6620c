"""Projective geometry: backprojection, cross-frame index maps, z-buffer
point rendering, and normal-view (omega) maps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import CameraModel, DepthFrame, RigidPose


@dataclass
class PointCloud:
    """World- or camera-frame points with their originating pixels.

    points: (N, 3) float64, millimeters.
    source_pixel: (N, 3) int32 rows of (frame_id, u, v).
    normals: optional (N, 3) unit normals (same frame as points).
    """

    points: np.ndarray
    source_pixel: np.ndarray
    normals: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        self.source_pixel = np.asarray(self.source_pixel, dtype=np.int32).reshape(-1, 3)
        if len(self.points) != len(self.source_pixel):
            raise ValueError("every point needs exactly one source pixel")
        if not np.isfinite(self.points).all():
            raise ValueError("point coordinates must be finite")
        if self.normals is not None:
            self.normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
            if len(self.normals) != len(self.points):
                raise ValueError("normal count must match point count")

    def __len__(self) -> int:
        return len(self.points)

    def transformed(self, pose: RigidPose) -> "PointCloud":
        normals = None if self.normals is None else self.normals @ pose.rotation.T
        return PointCloud(pose.apply(self.points), self.source_pixel.copy(), normals)

    def select(self, mask: np.ndarray) -> "PointCloud":
        normals = None if self.normals is None else self.normals[mask]
        return PointCloud(self.points[mask], self.source_pixel[mask], normals)


@dataclass
class RenderedDepth:
    """Z-buffered splat render: depth raster (0 = empty) plus, per covered
    pixel, the index of the winning cloud point (-1 = empty)."""

    depth: np.ndarray
    source_index: np.ndarray

    def __post_init__(self):
        covered = self.source_index >= 0
        assert (self.depth[covered] > 0).all() and (self.depth[~covered] == 0).all()


@dataclass
class OmegaMap:
    """|cos| between viewing ray and surface normal, 0 where undefined."""

    omega: np.ndarray

    def __post_init__(self):
        if (self.omega < 0).any() or (self.omega > 1).any():
            raise ValueError("omega must lie in [0, 1]")


def pixel_grid(camera: CameraModel) -> tuple[np.ndarray, np.ndarray]:
    u = np.arange(camera.width, dtype=np.float64)
    v = np.arange(camera.height, dtype=np.float64)
    return np.meshgrid(u, v)


def backproject_points(depth: np.ndarray, camera: CameraModel) -> np.ndarray:
    """Per-pixel 3D points in the camera frame, (H, W, 3); zero depth gives
    a zero point (callers mask by depth > 0)."""
    uu, vv = pixel_grid(camera)
    d = depth.astype(np.float64)
    x = (uu - camera.cx) * d / camera.fx
    y = (vv - camera.cy) * d / camera.fy
    return np.dstack([x, y, d])


def backproject(frame: DepthFrame, world: bool = True,
                normals: np.ndarray | None = None) -> PointCloud:
    """One point per measured pixel; world=True applies the frame pose.

    normals, when given, must be per-pixel (H, W, 3) camera-frame vectors;
    they are carried onto the cloud (rotated under the pose for world output).
    """
    if world and frame.pose is None:
        raise ValueError(f"frame {frame.frame_id} has no pose; world output needs one")
    mask = frame.valid_mask
    pts_cam = backproject_points(frame.depth, frame.camera)[mask]
    uu, vv = np.meshgrid(
        np.arange(frame.camera.width, dtype=np.int32),
        np.arange(frame.camera.height, dtype=np.int32),
    )
    src = np.column_stack(
        [np.full(mask.sum(), frame.frame_id, dtype=np.int32), uu[mask], vv[mask]]
    )
    n = None if normals is None else normals[mask]
    if world:
        pts = frame.pose.apply(pts_cam)
        if n is not None:
            n = n @ frame.pose.rotation.T
    else:
        pts = pts_cam
    return PointCloud(pts, src, n)


def project_points(points: np.ndarray, camera: CameraModel,
                   pose: RigidPose | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Project world (or camera-frame when pose is None) points.

    Returns (u, v) continuous pixel coordinates and z-depth; points at or
    behind the camera plane get depth <= 0 and must be masked by the caller.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pose is not None:
        pts = pose.inverse().apply(pts)
    z = pts[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = camera.fx * pts[:, 0] / z + camera.cx
        v = camera.fy * pts[:, 1] / z + camera.cy
    return u, v, z


def reproject_index(frame_f: DepthFrame, frame_g: DepthFrame):
    """Index map from frame f pixels into camera g (both must be posed).

    Returns per-measured-pixel arrays: src (N, 2) int (u_f, v_f),
    uv (N, 2) continuous target coordinates, depth (N,) in camera g,
    and in_frame flagging targets whose nearest pixel lies inside g.
    """
    if frame_f.pose is None or frame_g.pose is None:
        raise ValueError("reproject_index requires both frames posed")
    cloud = backproject(frame_f, world=True)
    u, v, d = project_points(cloud.points, frame_g.camera, frame_g.pose)
    ur = np.round(u).astype(np.int64)
    vr = np.round(v).astype(np.int64)
    cam = frame_g.camera
    in_frame = (d > 0) & (ur >= 0) & (ur < cam.width) & (vr >= 0) & (vr < cam.height)
    return cloud.source_pixel[:, 1:], np.column_stack([u, v]), d, in_frame


def render_depth(cloud: PointCloud, camera: CameraModel,
                 pose: RigidPose | None = None) -> RenderedDepth:
    """Splat points to their nearest pixel, keeping the minimum depth.

    Ties on depth resolve to the lowest point index, so renders are
    deterministic.  pose is the target camera-to-world transform (None if
    the cloud is already in the target camera frame).
    """
    h, w = camera.height, camera.width
    depth = np.zeros((h, w), dtype=np.float64)
    source_index = np.full((h, w), -1, dtype=np.int64)
    if len(cloud) == 0:
        return RenderedDepth(depth, source_index)

    u, v, z = project_points(cloud.points, camera, pose)
    ur = np.round(u).astype(np.int64)
    vr = np.round(v).astype(np.int64)
    ok = (z > 0) & (ur >= 0) & (ur < w) & (vr >= 0) & (vr < h)
    if not ok.any():
        return RenderedDepth(depth, source_index)

    flat = vr[ok] * w + ur[ok]
    zok = z[ok]
    idx = np.nonzero(ok)[0]
    # Sort by (pixel, depth, point index): the first entry per pixel wins.
    order = np.lexsort((idx, zok, flat))
    flat, zok, idx = flat[order], zok[order], idx[order]
    first = np.ones(len(flat), dtype=bool)
    first[1:] = flat[1:] != flat[:-1]
    depth.reshape(-1)[flat[first]] = zok[first]
    source_index.reshape(-1)[flat[first]] = idx[first]
    return RenderedDepth(depth, source_index)


def facet_normals(frame: DepthFrame, max_jump_mm: float | None = None) -> np.ndarray:
    """Camera-frame unit normals from central differences of backprojected
    points; zero where depth or any 4-neighbor is missing.

    max_jump_mm, when set, additionally zeroes facets straddling a depth
    discontinuity larger than that (registration wants this: facets across
    silhouettes are not surface tangents).
    """
    pts = backproject_points(frame.depth, frame.camera)
    valid = frame.valid_mask
    h, w = valid.shape

    normals = np.zeros((h, w, 3))
    du = pts[1:-1, 2:] - pts[1:-1, :-2]
    dv = pts[2:, 1:-1] - pts[:-2, 1:-1]
    n = np.cross(du, dv)
    good = (
        valid[1:-1, 1:-1]
        & valid[1:-1, 2:]
        & valid[1:-1, :-2]
        & valid[2:, 1:-1]
        & valid[:-2, 1:-1]
    )
    if max_jump_mm is not None:
        d = frame.depth.astype(np.float64)
        center = d[1:-1, 1:-1]
        for nb in (d[1:-1, 2:], d[1:-1, :-2], d[2:, 1:-1], d[:-2, 1:-1]):
            good &= np.abs(nb - center) < max_jump_mm
    norm = np.linalg.norm(n, axis=2)
    good &= norm > 0
    n_unit = np.zeros_like(n)
    n_unit[good] = n[good] / norm[good][:, None]
    normals[1:-1, 1:-1] = n_unit
    return normals


def omega_map(frame: DepthFrame) -> OmegaMap:
    """Per-pixel |n . ray| with facet normals; 0 where undefined.

    Facet winding is arbitrary, so the inner product is folded by absolute
    value: 1 means the surface faces the ray head-on, 0 means grazing.
    Computed in the camera frame, so the value is independent of pose.
    """
    normals = facet_normals(frame)
    pts = backproject_points(frame.depth, frame.camera)
    ray_norm = np.linalg.norm(pts, axis=2)
    defined = (np.linalg.norm(normals, axis=2) > 0) & (ray_norm > 0)
    omega = np.zeros(frame.depth.shape)
    dots = np.abs(np.sum(normals * pts, axis=2))
    omega[defined] = dots[defined] / ray_norm[defined]
    return OmegaMap(np.clip(omega, 0.0, 1.0))
