"""Domain types and dataset round trips."""

import json

import numpy as np
import pytest

from desmear import dataset
from desmear.core import (
    CONF_SCALE,
    AnnotatorConfig,
    CameraModel,
    DatasetError,
    DepthFrame,
    LabelMap,
    RigidPose,
    SceneSequence,
)
from desmear.simulator import default_scene_config, render_scene, scene_from_config


def make_camera(w=32, h=24):
    return CameraModel(fx=40.0, fy=40.0, cx=w / 2, cy=h / 2, width=w, height=h)


class TestCameraModel:
    def test_valid(self):
        cam = make_camera()
        assert cam.k_matrix[0, 0] == 40.0

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"fx": 0.0},
            {"fy": -1.0},
            {"cx": 0.0},
            {"cx": 32.0},
            {"cy": -3.0},
            {"cy": 24.0},
        ],
    )
    def test_invariants(self, kwargs):
        base = dict(fx=40.0, fy=40.0, cx=16.0, cy=12.0, width=32, height=24)
        base.update(kwargs)
        with pytest.raises(ValueError):
            CameraModel(**base)

    def test_dict_round_trip(self):
        cam = make_camera()
        assert CameraModel.from_dict(cam.to_dict()) == cam

    def test_rejects_non_mm_units(self):
        d = make_camera().to_dict()
        d["depth_unit"] = "m"
        with pytest.raises(DatasetError):
            CameraModel.from_dict(d)


class TestRigidPose:
    def test_compose_inverse(self):
        rng = np.random.default_rng(3)
        from scipy.spatial.transform import Rotation

        a = RigidPose(Rotation.random(random_state=1).as_matrix(), rng.normal(size=3))
        b = RigidPose(Rotation.random(random_state=2).as_matrix(), rng.normal(size=3))
        pts = rng.normal(size=(10, 3))
        np.testing.assert_allclose(a.compose(b).apply(pts), a.apply(b.apply(pts)), atol=1e-12)
        ident = a.compose(a.inverse())
        np.testing.assert_allclose(ident.rotation, np.eye(3), atol=1e-12)
        np.testing.assert_allclose(ident.translation, 0.0, atol=1e-9)

    def test_rejects_non_orthonormal(self):
        with pytest.raises(ValueError):
            RigidPose(np.eye(3) * 1.001, np.zeros(3))

    def test_rejects_reflection(self):
        r = np.diag([1.0, 1.0, -1.0])
        with pytest.raises(ValueError):
            RigidPose(r, np.zeros(3))

    def test_json_round_trip(self):
        from scipy.spatial.transform import Rotation

        pose = RigidPose(Rotation.random(random_state=7).as_matrix(), [1.5, -2.0, 3.0])
        again = RigidPose.from_dict(pose.to_dict())
        np.testing.assert_allclose(again.rotation, pose.rotation)
        np.testing.assert_allclose(again.translation, pose.translation)


class TestDepthFrame:
    def test_dimension_mismatch(self):
        cam = make_camera()
        with pytest.raises(DatasetError, match="dimension mismatch"):
            DepthFrame(0, np.zeros((10, 10), dtype=np.uint16), cam)

    def test_negative_depth_rejected(self):
        cam = make_camera()
        d = np.zeros((24, 32))
        d[0, 0] = -5.0
        with pytest.raises(ValueError):
            DepthFrame(0, d, cam)

    def test_float_depth_preserved(self):
        cam = make_camera()
        d = np.full((24, 32), 1234.56)
        frame = DepthFrame(0, d, cam)
        assert frame.depth.dtype == np.float64
        assert frame.depth[0, 0] == 1234.56

    def test_range_check(self):
        cam = make_camera()
        with pytest.raises(ValueError):
            DepthFrame(0, np.full((24, 32), 70000.0), cam)


class TestSceneSequence:
    def test_frame_ids_strictly_increasing(self):
        cam = make_camera()
        f = lambda i: DepthFrame(i, np.zeros((24, 32), dtype=np.uint16), cam)
        with pytest.raises(ValueError):
            SceneSequence((f(0), f(0)))

    def test_shared_camera(self):
        cam1, cam2 = make_camera(), make_camera(w=64, h=48)
        a = DepthFrame(0, np.zeros((24, 32), dtype=np.uint16), cam1)
        b = DepthFrame(1, np.zeros((48, 64), dtype=np.uint16), cam2)
        with pytest.raises(ValueError):
            SceneSequence((a, b))


class TestAnnotatorConfig:
    def test_defaults(self):
        cfg = AnnotatorConfig()
        assert cfg.epsilon_mm == 4.0
        assert cfg.delta_mm == 15.0
        assert cfg.window == 3
        assert cfg.m == 4
        assert cfg.alpha == 0.3
        assert cfg.beta == 0.7

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"epsilon_mm": 0.0},
            {"delta_mm": 3.0},
            {"window": 2},
            {"window": 0},
            {"m": 3},
            {"m": 0},
        ],
    )
    def test_invariants(self, kwargs):
        with pytest.raises(ValueError):
            AnnotatorConfig(**kwargs)


class TestDatasetIO:
    def _small_dataset(self, tmp_path, n=5, with_poses=False):
        cam = make_camera()
        rng = np.random.default_rng(0)
        frames = []
        for i in range(n):
            depth = rng.integers(0, 4000, size=(24, 32)).astype(np.uint16)
            pose = RigidPose.identity() if with_poses else None
            frames.append(DepthFrame(i, depth, cam, pose))
        seq = SceneSequence(tuple(frames))
        return dataset.write_sequence(seq, tmp_path / "ds"), seq

    def test_load_without_poses(self, tmp_path):
        root, seq = self._small_dataset(tmp_path)
        loaded = dataset.load_sequence(root)
        assert len(loaded) == 5
        assert all(f.pose is None for f in loaded.frames)
        for a, b in zip(loaded.frames, seq.frames):
            np.testing.assert_array_equal(a.depth, b.depth)

    def test_missing_intrinsics(self, tmp_path):
        root, _ = self._small_dataset(tmp_path)
        (root / "intrinsics.json").unlink()
        with pytest.raises(DatasetError, match="intrinsics"):
            dataset.load_sequence(root)

    def test_dimension_mismatch(self, tmp_path):
        root, _ = self._small_dataset(tmp_path)
        dataset.write_png(root / "depth" / "000002.png",
                          np.zeros((10, 10), dtype=np.uint16))
        with pytest.raises(DatasetError, match="dimension mismatch"):
            dataset.load_sequence(root)

    def test_malformed_pose(self, tmp_path):
        root, _ = self._small_dataset(tmp_path)
        pose_file = root / "poses" / "000001.json"
        pose_file.parent.mkdir(exist_ok=True)
        pose_file.write_text(json.dumps({"rotation": [1, 0, 0], "translation": [0, 0, 0]}))
        with pytest.raises(DatasetError, match="malformed pose"):
            dataset.load_sequence(root)

    def test_simulator_round_trip_bit_exact(self, tmp_path):
        cfg = default_scene_config()
        cfg["camera"].update({"fx": 64.0, "fy": 64.0, "cx": 32.0, "cy": 32.0,
                              "width": 64, "height": 64})
        cfg["trajectory"]["frames"] = 4
        scene, cam = scene_from_config(cfg)
        seq, _ = render_scene(scene, cam)
        root1 = dataset.write_sequence(seq, tmp_path / "a")
        loaded = dataset.load_sequence(root1)
        root2 = dataset.write_sequence(loaded, tmp_path / "b")
        for f in seq.frames:
            name = f"{dataset.frame_name(f.frame_id)}.png"
            assert (root1 / "depth" / name).read_bytes() == (root2 / "depth" / name).read_bytes()
        for a, b in zip(loaded.frames, seq.frames):
            np.testing.assert_array_equal(a.depth, b.depth)
            np.testing.assert_allclose(a.pose.rotation, b.pose.rotation)
            np.testing.assert_allclose(a.pose.translation, b.pose.translation)


class TestLabelIO:
    def test_all_unknown_writes_zeros(self, tmp_path):
        lab = LabelMap.empty((16, 16))
        dataset.save_labels(lab, tmp_path, 0)
        raw = dataset.read_png(tmp_path / "labels" / "000000.png")
        assert (raw == 0).all()

    def test_round_trip_identity(self, tmp_path):
        rng = np.random.default_rng(1)
        label = rng.integers(0, 3, size=(20, 30)).astype(np.uint8)
        conf = rng.random((20, 30))
        conf[label == 0] = 0.0
        # store-and-load only touches confidence through quantization
        lab = LabelMap(label, np.round(conf * CONF_SCALE) / CONF_SCALE)
        dataset.save_labels(lab, tmp_path, 3)
        again = dataset.load_labels(tmp_path, 3)
        assert again == lab

    def test_confidence_quantization_bound(self, tmp_path):
        rng = np.random.default_rng(2)
        label = np.ones((25, 25), dtype=np.uint8)
        conf = rng.random((25, 25))
        dataset.save_labels(LabelMap(label, conf), tmp_path, 0)
        again = dataset.load_labels(tmp_path, 0)
        assert np.abs(again.confidence - conf).max() <= 0.5 / CONF_SCALE + 1e-12

    def test_label_invariant_enforced(self):
        label = np.zeros((4, 4), dtype=np.uint8)
        conf = np.full((4, 4), 0.5)
        with pytest.raises(ValueError):
            LabelMap(label, conf)


class TestEvidenceIO:
    def test_flags_round_trip(self, tmp_path):
        rng = np.random.default_rng(5)
        v, b, e = (rng.random((12, 12)) < 0.3 for _ in range(3))
        dataset.save_evidence_flags(tmp_path, 7, v, b, e)
        v2, b2, e2 = dataset.load_evidence_flags(tmp_path, 7)
        np.testing.assert_array_equal(v, v2)
        np.testing.assert_array_equal(b, b2)
        np.testing.assert_array_equal(e, e2)


class TestScoreIO:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(6)
        scores = rng.random((10, 10))
        dataset.save_scores(tmp_path, 2, scores)
        again = dataset.load_scores(tmp_path, 2)
        assert np.abs(again - scores).max() <= 0.5 / CONF_SCALE + 1e-12
