"""Multi-frame pose estimation by point-to-plane ICP.

Pairwise registration runs on voxel-downsampled clouds with normals taken
from the depth facets (local PCA when a bare cloud has none).  Sequence
alignment chains each frame against up to neighbor_span predecessors and
fuses the candidate poses by residual-weighted averaging in the tangent
space of the best candidate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.transform import Rotation

from .core import (
    LABEL_SMEARED,
    DegenerateGeometryError,
    LabelMap,
    RigidPose,
    SceneSequence,
)
from .geometry import PointCloud, backproject, facet_normals

_MIN_CORRESPONDENCES = 6


@dataclass(frozen=True)
class IcpConfig:
    max_iterations: int = 30
    correspondence_radius_mm: float = 100.0
    convergence_eps: float = 1e-8
    neighbor_span: int = 2
    voxel_size_mm: float = 10.0
    metric: str = "plane"  # "plane" or "point"
    coarse_to_fine: bool = True
    trim_fraction: float = 0.15  # worst correspondences dropped per iteration

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.correspondence_radius_mm <= 0:
            raise ValueError("correspondence_radius_mm must be > 0")
        if self.metric not in ("plane", "point"):
            raise ValueError("metric must be 'plane' or 'point'")


@dataclass
class IcpResult:
    pose: RigidPose
    rms_residual: float
    inlier_fraction: float
    iterations: int
    rms_history: list[float]


def voxel_downsample(cloud: PointCloud, voxel_mm: float) -> PointCloud:
    """Keep the lowest-index point per occupied voxel (deterministic)."""
    if voxel_mm <= 0 or len(cloud) == 0:
        return cloud
    keys = np.floor(cloud.points / voxel_mm).astype(np.int64)
    _, first = np.unique(keys, axis=0, return_index=True)
    return cloud.select(np.sort(first))


def estimate_normals(points: np.ndarray, k: int = 12) -> np.ndarray:
    """Unit normals from local PCA (smallest eigenvector per neighborhood)."""
    n = len(points)
    k = min(k, n - 1)
    if k < 2:
        raise DegenerateGeometryError("too few points to estimate normals")
    tree = cKDTree(points)
    _, idx = tree.query(points, k=k + 1)
    nbrs = points[idx]  # (n, k+1, 3)
    centered = nbrs - nbrs.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered)
    _, vecs = np.linalg.eigh(cov)
    return vecs[:, :, 0]


def _solve_point_to_plane(src: np.ndarray, dst: np.ndarray, normals: np.ndarray):
    a = np.hstack([np.cross(src, normals), normals])
    b = np.einsum("ij,ij->i", dst - src, normals)
    sol, *_ = np.linalg.lstsq(a, b, rcond=None)
    return sol[:3], sol[3:]


def _solve_point_to_point(src: np.ndarray, dst: np.ndarray):
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    h = (src - mu_s).T @ (dst - mu_d)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return Rotation.from_matrix(r).as_rotvec(), mu_d - r @ mu_s


def icp_pairwise(source: PointCloud, target: PointCloud,
                 init: RigidPose | None = None,
                 cfg: IcpConfig | None = None) -> IcpResult:
    """Pose taking source coordinates into target coordinates.

    Raises DegenerateGeometryError when fewer than 6 correspondences fall
    within the correspondence radius at any iteration.
    """
    cfg = cfg if cfg is not None else IcpConfig()
    init = init if init is not None else RigidPose.identity()
    if len(source) < 100 or len(target) < 100:
        raise DegenerateGeometryError(
            f"ICP needs >= 100 points per cloud, got {len(source)}/{len(target)}"
        )
    src_cloud = voxel_downsample(source, cfg.voxel_size_mm)
    dst_cloud = voxel_downsample(target, cfg.voxel_size_mm)
    dst = dst_cloud.points
    if cfg.metric == "plane":
        normals = dst_cloud.normals
        if normals is None:
            normals = estimate_normals(dst)
        else:
            nz = np.linalg.norm(normals, axis=1) > 0
            dst = dst[nz]
            normals = normals[nz]
    else:
        normals = None

    tree = cKDTree(dst)

    def correspond(pose: RigidPose, radius: float):
        moved = pose.apply(src_cloud.points)
        dist, idx = tree.query(moved, k=1, distance_upper_bound=radius)
        good = np.isfinite(dist)
        if cfg.trim_fraction > 0 and good.sum() >= 4 * _MIN_CORRESPONDENCES:
            # Trim the farthest matches: frustum edges and half-seen surfaces
            # have no true counterpart and would bias the solve.
            cut = np.quantile(dist[good], 1.0 - cfg.trim_fraction)
            good &= dist <= cut
        if good.sum() < _MIN_CORRESPONDENCES:
            raise DegenerateGeometryError(
                f"degenerate geometry: {int(good.sum())} correspondences "
                f"within {radius} mm"
            )
        return moved[good], dst[idx[good]], idx[good], good

    def residual_rms(pose: RigidPose, radius: float) -> float:
        p, q, qi, _ = correspond(pose, radius)
        if cfg.metric == "plane":
            res = np.einsum("ij,ij->i", q - p, normals[qi])
        else:
            res = np.linalg.norm(q - p, axis=1)
        return float(np.sqrt(np.mean(res**2)))

    pose = init
    iterations = 0
    history: list[float] = []
    # Coarse-to-fine correspondence radius: wide enough to catch the true
    # matches when the initialization is several degrees off, final level at
    # the configured radius.
    levels = [4.0, 2.0, 1.0] if cfg.coarse_to_fine else [1.0]
    for scale in levels:
        radius = cfg.correspondence_radius_mm * scale
        best = residual_rms(pose, radius)
        for _ in range(cfg.max_iterations):
            iterations += 1
            p, q, qi, _ = correspond(pose, radius)
            if cfg.metric == "plane":
                rot_vec, trans = _solve_point_to_plane(p, q, normals[qi])
            else:
                rot_vec, trans = _solve_point_to_point(p, q)
            inc = RigidPose(Rotation.from_rotvec(rot_vec).as_matrix(), trans)
            candidate = inc.compose(pose)
            cand_rms = residual_rms(candidate, radius)
            if cand_rms > best:  # reject worsening steps (keeps rms monotone)
                break
            pose = candidate
            best = cand_rms
            history.append(cand_rms)
            step = np.linalg.norm(rot_vec) + np.linalg.norm(trans) / max(
                cfg.correspondence_radius_mm, 1.0
            )
            if step < cfg.convergence_eps:
                break

    p, q, qi, good = correspond(pose, cfg.correspondence_radius_mm)
    if cfg.metric == "plane":
        res = np.einsum("ij,ij->i", q - p, normals[qi])
    else:
        res = np.linalg.norm(q - p, axis=1)
    return IcpResult(
        pose=pose,
        rms_residual=float(np.sqrt(np.mean(res**2))),
        inlier_fraction=float(good.mean()),
        iterations=iterations,
        rms_history=history,
    )


def _weighted_pose_average(poses: list[RigidPose], weights: list[float]) -> RigidPose:
    """Residual-weighted mean in the tangent space of the best candidate."""
    w = np.asarray(weights, dtype=float)
    w = w / w.sum()
    anchor = poses[int(np.argmax(w))]
    anchor_inv = anchor.inverse()
    rvec = np.zeros(3)
    tvec = np.zeros(3)
    for pose, wi in zip(poses, w):
        rel = anchor_inv.compose(pose)
        rvec += wi * Rotation.from_matrix(rel.rotation).as_rotvec()
        tvec += wi * rel.translation
    rel = RigidPose(Rotation.from_rotvec(rvec).as_matrix(), tvec)
    return anchor.compose(rel)


_NORMAL_JUMP_MM = 80.0


def frame_cloud(seq: SceneSequence, i: int,
                exclude: np.ndarray | None = None) -> PointCloud:
    """Camera-frame cloud with facet normals; exclude masks source pixels."""
    frame = seq[i]
    normals = facet_normals(frame, max_jump_mm=_NORMAL_JUMP_MM)
    if exclude is None:
        return backproject(frame, world=False, normals=normals)
    from .core import DepthFrame

    depth = np.where(exclude, 0, frame.depth).astype(np.uint16)
    masked = DepthFrame(frame.frame_id, depth, frame.camera, frame.pose)
    return backproject(masked, world=False, normals=normals)


def align_sequence(seq: SceneSequence, cfg: IcpConfig | None = None,
                   exclude_masks: list[np.ndarray] | None = None,
                   diagnostics: list[dict] | None = None,
                   warm_start: bool = False) -> SceneSequence:
    """Chain pairwise ICP into world poses; frame 0 anchors at identity.

    Each frame registers against up to neighbor_span predecessors and the
    candidate world poses fuse by inverse-residual weighting.  exclude_masks
    drops per-pixel points (used by the label-refinement pass); diagnostics,
    when a list is passed, collects per-frame residual summaries.  With
    warm_start, existing poses seed each pairwise registration instead of a
    constant-velocity prediction.
    """
    cfg = cfg if cfg is not None else IcpConfig()
    n = len(seq)
    if n < 2:
        raise DegenerateGeometryError("alignment needs at least two frames")
    if warm_start and not seq.is_posed:
        raise ValueError("warm_start needs a posed sequence")
    clouds = [
        frame_cloud(seq, i, None if exclude_masks is None else exclude_masks[i])
        for i in range(n)
    ]
    for i, c in enumerate(clouds):
        if len(c) < 100:
            raise DegenerateGeometryError(f"frame {i}: too few points for ICP ({len(c)})")

    poses: list[RigidPose] = [RigidPose.identity()]
    for i in range(1, n):
        # Constant-velocity prediction seeds each pairwise registration.
        if i >= 2:
            velocity = poses[i - 2].inverse().compose(poses[i - 1])
            predicted = poses[i - 1].compose(velocity)
        else:
            predicted = poses[i - 1]
        candidates = []
        weights = []
        results = []
        for j in range(max(0, i - cfg.neighbor_span), i):
            if warm_start:
                init = seq[j].pose.inverse().compose(seq[i].pose)
            else:
                init = poses[j].inverse().compose(predicted)
            result = icp_pairwise(clouds[i], clouds[j], init=init, cfg=cfg)
            candidates.append(poses[j].compose(result.pose))
            weights.append(1.0 / (result.rms_residual**2 + 1e-6))
            results.append(result)
        poses.append(_weighted_pose_average(candidates, weights))
        if diagnostics is not None:
            diagnostics.append(
                {
                    "frame": i,
                    "rms_residual": float(np.mean([r.rms_residual for r in results])),
                    "inlier_fraction": float(np.mean([r.inlier_fraction for r in results])),
                }
            )
    return seq.with_poses(poses)


def refine_with_labels(seq: SceneSequence, labels: list[LabelMap],
                       cfg: IcpConfig | None = None) -> SceneSequence:
    """Re-run alignment with smeared-labeled pixels excluded from ICP.

    Existing poses warm-start the registration, so refinement cleans up the
    current estimate rather than re-chaining from scratch.
    """
    if len(labels) != len(seq):
        raise ValueError("need one label map per frame")
    exclude = [lab.label == LABEL_SMEARED for lab in labels]
    return align_sequence(seq, cfg, exclude_masks=exclude, warm_start=seq.is_posed)


def pose_error(estimate: RigidPose, truth: RigidPose) -> tuple[float, float]:
    """(rotation degrees, translation mm) between two poses."""
    rel = estimate.inverse().compose(truth)
    ang = np.degrees(np.linalg.norm(Rotation.from_matrix(rel.rotation).as_rotvec()))
    return float(ang), float(np.linalg.norm(rel.translation))


def relative_pose_errors(estimated: SceneSequence, truth: SceneSequence) -> list[tuple[float, float]]:
    """Per-frame pose error after aligning both sequences to frame 0.

    Estimated poses anchor at identity, so compare relative poses
    (frame-0-referenced) rather than raw world poses.
    """
    out = []
    est0 = estimated[0].pose
    tru0 = truth[0].pose
    for fe, ft in zip(estimated.frames, truth.frames):
        est_rel = est0.inverse().compose(fe.pose)
        tru_rel = tru0.inverse().compose(ft.pose)
        out.append(pose_error(est_rel, tru_rel))
    return out
