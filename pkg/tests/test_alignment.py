"""ICP registration and sequence pose estimation."""

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from conftest import rich_icp_scene_config
from desmear.alignment import (
    IcpConfig,
    align_sequence,
    frame_cloud,
    icp_pairwise,
    pose_error,
    refine_with_labels,
    relative_pose_errors,
    voxel_downsample,
)
from desmear.annotator import annotate_sequence
from desmear.core import (
    AnnotatorConfig,
    DegenerateGeometryError,
    LabelMap,
    RigidPose,
    SceneSequence,
)
from desmear.geometry import PointCloud
from desmear.simulator import render_scene, scene_from_config


def structured_cloud(seed, n=2000):
    """Random points on a few planes and a sphere (well-constrained for ICP)."""
    rng = np.random.default_rng(seed)
    pts = []
    for normal, offset in [((0, 0, 1), 2000.0), ((1, 0, 0.2), 500.0), ((0, 1, 0.1), 300.0)]:
        normal = np.array(normal, float)
        normal /= np.linalg.norm(normal)
        basis = np.linalg.svd(normal[None, :])[2][1:]
        uv = rng.uniform(-400, 400, size=(n // 4, 2))
        pts.append(offset * normal + uv @ basis)
    phi = rng.uniform(0, 2 * np.pi, n // 4)
    theta = np.arccos(rng.uniform(-1, 1, n // 4))
    sphere = 150.0 * np.column_stack(
        [np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)]
    ) + np.array([100.0, -50.0, 1000.0])
    pts.append(sphere)
    points = np.vstack(pts)
    src = np.zeros((len(points), 3), dtype=np.int32)
    return PointCloud(points, src)


def small_motion(seed=0):
    rng = np.random.default_rng(seed)
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    rot = Rotation.from_rotvec(np.radians(3.0) * axis).as_matrix()
    return RigidPose(rot, rng.uniform(-40, 40, size=3))


class TestIcpPairwise:
    def test_identity_on_same_cloud(self):
        cloud = structured_cloud(0)
        res = icp_pairwise(cloud, cloud, cfg=IcpConfig(voxel_size_mm=0.0))
        rot_err, tr_err = pose_error(res.pose, RigidPose.identity())
        assert rot_err < 1e-6 and tr_err < 1e-6
        assert res.rms_residual < 1e-9

    def test_recovers_known_small_motion(self):
        cloud = structured_cloud(1)
        truth = small_motion(1)
        target = cloud.transformed(truth)
        res = icp_pairwise(cloud, target, cfg=IcpConfig())
        rot_err, tr_err = pose_error(res.pose, truth)
        assert rot_err < 0.1 and tr_err < 1.0

    def test_non_overlapping_clouds_degenerate(self):
        a = structured_cloud(2)
        b = PointCloud(a.points + np.array([50000.0, 0.0, 0.0]), a.source_pixel)
        with pytest.raises(DegenerateGeometryError):
            icp_pairwise(a, b, cfg=IcpConfig())

    def test_too_few_points(self):
        tiny = PointCloud(np.random.default_rng(0).normal(size=(20, 3)),
                          np.zeros((20, 3), np.int32))
        with pytest.raises(DegenerateGeometryError):
            icp_pairwise(tiny, tiny)

    def test_residual_history_non_increasing(self):
        rng = np.random.default_rng(3)
        cloud = structured_cloud(3)
        noisy = PointCloud(cloud.points + rng.normal(0, 2.0, cloud.points.shape),
                           cloud.source_pixel)
        target = noisy.transformed(small_motion(3))
        res = icp_pairwise(cloud, target,
                           cfg=IcpConfig(coarse_to_fine=False, voxel_size_mm=0.0))
        hist = res.rms_history
        assert len(hist) >= 2
        assert all(b <= a + 1e-12 for a, b in zip(hist, hist[1:]))

    def test_equivariance_under_rigid_conjugation(self):
        cloud = structured_cloud(4)
        truth = small_motion(4)
        target = cloud.transformed(truth)
        cfg = IcpConfig(voxel_size_mm=0.0, trim_fraction=0.0,
                        convergence_eps=1e-13, max_iterations=60)
        base = icp_pairwise(cloud, target, cfg=cfg).pose

        g = RigidPose(Rotation.random(random_state=9).as_matrix(), [300.0, -200.0, 150.0])
        moved = icp_pairwise(cloud.transformed(g), target.transformed(g), cfg=cfg).pose
        expected = g.compose(base).compose(g.inverse())
        assert np.abs(moved.rotation - expected.rotation).max() < 1e-6
        assert np.abs(moved.translation - expected.translation).max() < 1e-6

    def test_point_metric_also_works(self):
        cloud = structured_cloud(5)
        truth = small_motion(5)
        target = cloud.transformed(truth)
        res = icp_pairwise(cloud, target, cfg=IcpConfig(metric="point"))
        rot_err, tr_err = pose_error(res.pose, truth)
        assert rot_err < 0.1 and tr_err < 1.0


class TestVoxelDownsample:
    def test_reduces_and_keeps_membership(self):
        cloud = structured_cloud(6)
        down = voxel_downsample(cloud, 50.0)
        assert 0 < len(down) < len(cloud)
        # every kept point is one of the originals
        idx = {tuple(np.round(p, 9)) for p in cloud.points}
        assert all(tuple(np.round(p, 9)) in idx for p in down.points)

    def test_zero_voxel_is_noop(self):
        cloud = structured_cloud(7)
        assert voxel_downsample(cloud, 0.0) is cloud


class TestAlignSequence:
    def test_static_sequence_gives_identity(self):
        from desmear.core import DepthFrame

        cfg = rich_icp_scene_config(0)
        scene, cam = scene_from_config(cfg)
        seq, _ = render_scene(scene, cam)
        depth = seq.frames[0].depth
        static = SceneSequence(
            tuple(DepthFrame(i, depth, cam, RigidPose.identity()) for i in range(4))
        )
        aligned = align_sequence(static, IcpConfig())
        for frame in aligned.frames:
            rot_err, tr_err = pose_error(frame.pose, RigidPose.identity())
            assert rot_err < 1e-6 and tr_err < 1e-6

    def test_two_frame_reduction_matches_pairwise(self):
        scene, cam = scene_from_config(rich_icp_scene_config(1))
        seq, _ = render_scene(scene, cam)
        two = SceneSequence(seq.frames[:2])
        cfg = IcpConfig()
        aligned = align_sequence(two, cfg)
        pair = icp_pairwise(frame_cloud(two, 1), frame_cloud(two, 0),
                            init=RigidPose.identity(), cfg=cfg)
        np.testing.assert_allclose(aligned[1].pose.rotation, pair.pose.rotation, atol=1e-12)
        np.testing.assert_allclose(aligned[1].pose.translation, pair.pose.translation,
                                   atol=1e-9)

    def test_single_frame_rejected(self):
        scene, cam = scene_from_config(rich_icp_scene_config(2))
        seq, _ = render_scene(scene, cam)
        with pytest.raises(DegenerateGeometryError):
            align_sequence(SceneSequence(seq.frames[:1]), IcpConfig())

    def test_arc_oracle_small(self):
        # 3 scenes here; the full 20-scene gate lives in the acceptance suite
        for seed in range(3):
            scene, cam = scene_from_config(rich_icp_scene_config(seed))
            seq, _ = render_scene(scene, cam)
            est = align_sequence(seq, IcpConfig())
            errs = relative_pose_errors(est, seq)
            ok = sum(1 for e in errs if e[0] <= 0.2 and e[1] <= 2.0)
            assert ok / len(errs) >= 0.9


class TestRefineWithLabels:
    def _ann_labels(self, seq, all_value=None):
        labels = []
        for frame in seq.frames:
            lab = LabelMap.empty(frame.depth.shape)
            if all_value is not None:
                lab.label[:] = all_value
                if all_value == 2:
                    lab.confidence[:] = 1.0
            labels.append(lab)
        return labels

    def test_all_unknown_matches_plain_alignment(self):
        scene, cam = scene_from_config(rich_icp_scene_config(3))
        seq, _ = render_scene(scene, cam)
        cfg = IcpConfig()
        plain = align_sequence(seq, cfg)
        refined = refine_with_labels(plain, self._ann_labels(seq), cfg)
        # no exclusions: same fixed point up to solver convergence slop
        for a, b in zip(plain.frames, refined.frames):
            rot_err, tr_err = pose_error(a.pose, b.pose)
            assert rot_err < 5e-3 and tr_err < 5e-2

    def test_all_smeared_degenerate(self):
        scene, cam = scene_from_config(rich_icp_scene_config(4))
        seq, _ = render_scene(scene, cam)
        with pytest.raises(DegenerateGeometryError):
            refine_with_labels(seq, self._ann_labels(seq, all_value=2), IcpConfig())

    def test_refinement_improves_poses(self):
        # paired trials on smeared scenes: refined error <= first pass in >=80%
        icfg = IcpConfig(trim_fraction=0.10)
        wins = 0
        trials = 5
        for seed in range(trials):
            cfg = rich_icp_scene_config(seed, rate=0.7, band=3, lam=(0.5, 0.9),
                                        rng_offset=2000)
            scene, cam = scene_from_config(cfg)
            seq, _ = render_scene(scene, cam)
            first = align_sequence(seq, icfg)
            e1 = np.mean([e[1] for e in relative_pose_errors(first, seq)])
            result = annotate_sequence(first, AnnotatorConfig())
            refined = refine_with_labels(first, result.labels, icfg)
            e2 = np.mean([e[1] for e in relative_pose_errors(refined, seq)])
            wins += e2 <= e1
        assert wins / trials >= 0.8
