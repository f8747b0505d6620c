"""Training-set export: resampling rules and the manifest."""

import json

import numpy as np
import pytest

from desmear import dataset
from desmear.core import AnnotatorConfig, DatasetError
from desmear.export import center_crop_box, export_dataset, nearest_indices, resample_nearest
from desmear.simulator import default_scene_config, write_scene_dataset


@pytest.fixture(scope="module")
def annotated_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("export") / "ds"
    cfg = default_scene_config()
    cfg["camera"].update({"fx": 96.0, "fy": 96.0, "cx": 48.0, "cy": 48.0,
                          "width": 96, "height": 96})
    cfg["trajectory"]["frames"] = 6
    write_scene_dataset(cfg, root)

    from desmear.annotator import annotate_sequence

    seq = dataset.load_sequence(root)
    result = annotate_sequence(seq, AnnotatorConfig())
    for frame, lab, ev in zip(seq.frames, result.labels, result.evidence):
        dataset.save_labels(lab, root, frame.frame_id)
        dataset.save_evidence_flags(root, frame.frame_id, ev.v, ev.b, ev.e)
    with open(root / "labels" / "stats.json", "w") as fh:
        json.dump(result.stats, fh)
    return root


class TestResampling:
    def test_identity_for_matching_size(self):
        rng = np.random.default_rng(0)
        raster = rng.integers(0, 65535, size=(512, 512)).astype(np.uint16)
        out = resample_nearest(raster, 512)
        np.testing.assert_array_equal(out, raster)

    def test_preserves_value_set(self):
        rng = np.random.default_rng(1)
        raster = rng.integers(0, 5000, size=(96, 96)).astype(np.uint16)
        out = resample_nearest(raster, 512)
        assert set(np.unique(out)) <= set(np.unique(raster))

    def test_nearest_indices_identity(self):
        np.testing.assert_array_equal(nearest_indices(100, 100), np.arange(100))

    def test_center_crop(self):
        assert center_crop_box(160, 120) == (20, 0, 120, 120)
        assert center_crop_box(96, 96) == (0, 0, 96, 96)


class TestExportDataset:
    def test_manifest_and_rasters(self, annotated_dataset, tmp_path):
        out = tmp_path / "export"
        manifest = export_dataset(annotated_dataset, out, alpha=0.3, beta=0.7, size=256)
        assert set(manifest["weights"]) == {"w_b", "w_e", "w_v"}
        assert manifest["evidence_counts"]["v"] > 0
        assert manifest["alpha"] == 0.3 and manifest["beta"] == 0.7
        assert manifest["modalities"] == ["depth", "omega"]
        assert len(manifest["frames"]) == 6
        first = manifest["frames"][0]
        for key in ("depth", "omega", "label", "confidence", "evidence", "gt"):
            assert (out / first[key]).is_file()
        depth = dataset.read_png(out / first["depth"])
        assert depth.shape == (256, 256)
        omega = dataset.read_png(out / first["omega"])
        assert omega.dtype == np.uint16
        with open(out / "manifest.json") as fh:
            on_disk = json.load(fh)
        assert on_disk["weights"] == manifest["weights"]

    def test_depth_values_preserved(self, annotated_dataset, tmp_path):
        out = tmp_path / "export2"
        manifest = export_dataset(annotated_dataset, out, size=512)
        src_depth = dataset.read_png(annotated_dataset / "depth" / "000000.png")
        exported = dataset.read_png(out / manifest["frames"][0]["depth"])
        assert set(np.unique(exported)) <= set(np.unique(src_depth))

    def test_requires_annotation(self, tmp_path):
        root = tmp_path / "plain"
        cfg = default_scene_config()
        cfg["camera"].update({"fx": 48.0, "fy": 48.0, "cx": 24.0, "cy": 24.0,
                              "width": 48, "height": 48})
        cfg["trajectory"]["frames"] = 3
        write_scene_dataset(cfg, root)
        with pytest.raises(DatasetError, match="annotate"):
            export_dataset(root, tmp_path / "out")
