"""Acceptance suite: one test per release criterion, each printing a
pass/fail line (run with `pytest tests/test_acceptance.py -v -s`)."""

import time

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from conftest import rich_icp_scene_config
from desmear.alignment import IcpConfig, align_sequence, relative_pose_errors
from desmear.annotator import (
    EvidenceMap,
    WeightSet,
    angle_confidence,
    annotate_sequence,
    class_weights,
    filter_empty_evidence,
    fuse_labels,
)
from desmear.baselines import median_filter_scores, statistical_outlier_raster
from desmear.core import (
    LABEL_SMEARED,
    LABEL_UNKNOWN,
    LABEL_VALID,
    AnnotatorConfig,
    CameraModel,
    DepthFrame,
    RigidPose,
)
from desmear.fusion import fuse_sequence
from desmear.geometry import backproject, project_points
from desmear.metrics import average_precision, labels_to_scores, mean_average_precision
from desmear.simulator import default_scene_config, render_scene, scene_from_config
from test_baselines_metrics import bruteforce_average_precision


def check(name, ok, detail=""):
    print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    assert ok, f"{name}: {detail}"


def test_geometry_round_trip():
    rng = np.random.default_rng(0)
    cam = CameraModel(210.0, 200.0, 161.0, 119.0, 320, 240)
    start = time.perf_counter()
    checked = 0
    worst_px = worst_mm = 0.0
    while checked < 100_000:
        depth = rng.uniform(300, 8000, size=(cam.height, cam.width))
        pose = RigidPose(
            Rotation.random(random_state=int(rng.integers(1 << 30))).as_matrix(),
            rng.uniform(-1000, 1000, size=3),
        )
        frame = DepthFrame(0, depth, cam, pose)
        cloud = backproject(frame, world=True)
        u, v, z = project_points(cloud.points, cam, pose)
        du = np.abs(u - cloud.source_pixel[:, 1])
        dv = np.abs(v - cloud.source_pixel[:, 2])
        dz = np.abs(z - depth[cloud.source_pixel[:, 2], cloud.source_pixel[:, 1]])
        worst_px = max(worst_px, du.max(), dv.max())
        worst_mm = max(worst_mm, dz.max())
        checked += len(cloud)
    elapsed = time.perf_counter() - start
    check(
        "geometry round-trip",
        worst_px < 1e-6 and worst_mm < 1e-6 and elapsed < 5.0,
        f"{checked} pixels, worst {worst_px:.2e} px / {worst_mm:.2e} mm in {elapsed:.2f}s",
    )


def test_icp_oracle():
    start = time.perf_counter()
    errors = []
    for seed in range(20):
        scene, cam = scene_from_config(rich_icp_scene_config(seed))
        seq, _ = render_scene(scene, cam)
        steps = [
            np.linalg.norm(b.translation - a.translation)
            for a, b in zip(scene.trajectory, scene.trajectory[1:])
        ]
        assert max(steps) <= 50.0  # inter-frame motion within the stated regime
        est = align_sequence(seq, IcpConfig())
        errors.extend(relative_pose_errors(est, seq))
    elapsed = time.perf_counter() - start
    ok = sum(1 for rot, tr in errors if rot <= 0.2 and tr <= 2.0)
    frac = ok / len(errors)
    check(
        "ICP oracle",
        frac >= 0.95 and elapsed < 120.0,
        f"{ok}/{len(errors)} frames within 0.2 deg / 2 mm ({frac:.1%}) in {elapsed:.1f}s",
    )


def test_annotator_soundness(clean_scene):
    seq, _ = clean_scene
    exact = annotate_sequence(seq, AnnotatorConfig())
    zero_smear = exact.stats["totals"]["smeared"] == 0

    noisy_cfg = default_scene_config()
    noisy_cfg["smear"]["rate"] = 0.0
    noisy_cfg["noise_sigma_mm"] = 2.0
    scene, cam = scene_from_config(noisy_cfg)
    noisy_seq, _ = render_scene(scene, cam)
    noisy = annotate_sequence(noisy_seq, AnnotatorConfig())
    tot = noisy.stats["totals"]
    labeled = tot["valid"] + tot["smeared"]
    rate = tot["smeared"] / labeled
    check(
        "annotator soundness",
        zero_smear and rate < 0.001,
        f"q=0 smeared={exact.stats['totals']['smeared']} (exact), "
        f"sigma=2mm false rate {rate:.5f} over {labeled} labeled",
    )


def test_annotator_power(default_scene, default_annotation):
    start = time.perf_counter()
    seq, masks = default_scene
    result = annotate_sequence(seq, AnnotatorConfig())  # timed fresh run
    elapsed = time.perf_counter() - start
    tp = fp = fn = 0
    for lab, mask in zip(result.labels, masks):
        pred = lab.label
        tp += int(((pred == LABEL_SMEARED) & (mask == LABEL_SMEARED)).sum())
        fp += int(((pred == LABEL_SMEARED) & (mask == LABEL_VALID)).sum())
        fn += int(((pred != LABEL_SMEARED) & (mask == LABEL_SMEARED)).sum())
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    unknown = result.stats["unknown_fraction"]
    check(
        "annotator power",
        precision >= 0.95 and recall >= 0.5 and elapsed < 180.0,
        f"precision {precision:.4f} (>=0.95), recall {recall:.4f} (>=0.5), "
        f"unknown fraction {unknown:.3f} (informational), {elapsed:.1f}s for 30 frames",
    )


def test_fusion_truth_table():
    combos = [(v, b, e) for v in (0, 1) for b in (0, 1) for e in (0, 1)]
    ev = EvidenceMap((1, 8))
    for i, (v, b, e) in enumerate(combos):
        ev.v[0, i], ev.b[0, i], ev.e[0, i] = bool(v), bool(b), bool(e)
        if v:
            ev.c[0, i] = 0.8
    labels = fuse_labels(ev).label[0]
    expected = [
        LABEL_VALID if v and not (b or e)
        else LABEL_SMEARED if (b or e) and not v
        else LABEL_UNKNOWN
        for v, b, e in combos
    ]
    ok = all(int(labels[i]) == expected[i] for i in range(8))
    table = ", ".join(
        f"{c}->{int(labels[i])}" for i, c in enumerate(combos)
    )
    check("fusion truth table", ok, table)


def test_confidence_spot_values():
    vals = {
        90: angle_confidence(np.cos(np.radians(90))),
        30: angle_confidence(np.cos(np.radians(30))),
        0: angle_confidence(np.cos(0.0)),
    }
    ok = (
        vals[90] == pytest.approx(1.0, abs=1e-15)
        and vals[30] == pytest.approx(0.25, abs=1e-15)
        and vals[0] == pytest.approx(0.0, abs=1e-15)
    )
    check(
        "viewing-angle confidence spot values",
        ok,
        f"sin^2(90)={vals[90]:.6f}, sin^2(30)={vals[30]:.6f}, sin^2(0)={vals[0]:.6f}",
    )


def test_class_weight_identities():
    equal = WeightSet.from_counts(100, 100, 100)
    ok = all(
        w == pytest.approx(2 / 3) for w in (equal.w_v, equal.w_b, equal.w_e)
    )
    rng = np.random.default_rng(21)
    for _ in range(20):
        maps = []
        counts = {"v": 0, "b": 0, "e": 0}
        for _ in range(3):
            ev = EvidenceMap((10, 10))
            ev.v = rng.random((10, 10)) < rng.uniform(0.1, 0.9)
            ev.b = rng.random((10, 10)) < rng.uniform(0, 0.6)
            ev.e = rng.random((10, 10)) < rng.uniform(0, 0.6)
            maps.append(ev)
            for y in range(10):
                for x in range(10):
                    counts["v"] += bool(ev.v[y, x])
                    counts["b"] += bool(ev.b[y, x])
                    counts["e"] += bool(ev.e[y, x])
        total = sum(counts.values())
        ws = class_weights(maps)
        ok &= ws.w_v == 1 - counts["v"] / total
        ok &= ws.w_b == 1 - counts["b"] / total
        ok &= ws.w_e == 1 - counts["e"] / total
    check("class weights vs brute-force counts", bool(ok),
          "equal counts give 2/3; 20 random corpora match exactly")


def test_phi_window_monotonicity(default_annotation, pole_annotation,
                                 empty_evidence_annotation):
    ok = True
    detail = []
    for name, ann in [
        ("default", default_annotation),
        ("poles", pole_annotation),
        ("small-backdrop", empty_evidence_annotation),
    ]:
        counts = []
        for window in (1, 3, 5, 7):
            total = 0
            for ev in ann.evidence:
                filtered = filter_empty_evidence(ev, window)
                total += int(filtered.e.sum())
                # set inclusion against the previous window
            counts.append(total)
        mono = all(b <= a for a, b in zip(counts, counts[1:]))
        for ev in ann.evidence:
            prev = filter_empty_evidence(ev, 1).e
            for window in (3, 5, 7):
                cur = filter_empty_evidence(ev, window).e
                mono &= bool((cur <= prev).all())
                prev = cur
        ok &= mono
        detail.append(f"{name}: {counts}")
    check("phi-window monotonicity", bool(ok), "; ".join(detail))


def test_map_evaluator():
    rng = np.random.default_rng(5)
    ok = True
    worst = 0.0
    for trial in range(6):
        gt = rng.choice([0, 1, 2], p=[0.1, 0.7, 0.2], size=(50, 60)).astype(np.uint8)
        scores = (
            rng.random((50, 60)) if trial % 2
            else rng.choice(np.linspace(0, 1, 7), size=(50, 60))
        )
        got = average_precision(scores, gt)
        oracle = bruteforce_average_precision(scores, gt)
        worst = max(worst, abs(got - oracle))
        ok &= abs(got - oracle) < 1e-9
    perfect_gt = rng.choice([1, 2], size=(30, 30)).astype(np.uint8)
    perfect = average_precision((perfect_gt == 2).astype(float), perfect_gt)
    ok &= perfect == pytest.approx(1.0, abs=1e-15)
    check(
        "mAP evaluator vs brute force",
        bool(ok),
        f"max |delta| {worst:.2e} over 6 frames (3000 px each); perfect scores give {perfect}",
    )


def test_baseline_ordering(pole_scene, pole_annotation):
    seq, masks = pole_scene
    ann = mean_average_precision(
        [labels_to_scores(lab) for lab in pole_annotation.labels], masks
    )["map"]
    med = mean_average_precision(
        [median_filter_scores(f.depth) for f in seq.frames], masks
    )["map"]
    stat = mean_average_precision(
        [statistical_outlier_raster(f) for f in seq.frames], masks
    )["map"]
    check(
        "baseline ordering",
        ann > stat > med,
        f"annotator {ann:.3f} > statistical {stat:.3f} > median {med:.3f}",
    )


def test_fusion_application():
    cfg = default_scene_config()
    cfg["smear"]["lam"] = [0.1, 0.9]
    scene, cam = scene_from_config(cfg)
    seq, masks = render_scene(scene, cam)
    result = annotate_sequence(seq, AnnotatorConfig())
    raw = fuse_sequence(seq, "none")
    filtered = fuse_sequence(seq, "labels", labels=result.labels)

    def kinds(cloud):
        sm = va = 0
        fid, uu, vv = cloud.source_pixel.T
        for i, mask in enumerate(masks):
            sel = fid == i
            sm += int((mask[vv[sel], uu[sel]] == LABEL_SMEARED).sum())
            va += int((mask[vv[sel], uu[sel]] == LABEL_VALID).sum())
        return sm, va

    sm_raw, va_raw = kinds(raw)
    sm_flt, va_flt = kinds(filtered)
    removed = 1.0 - sm_flt / sm_raw
    retained = va_flt / va_raw
    check(
        "fusion application",
        removed >= 0.99 and retained >= 0.95,
        f"removed {removed:.4f} of smeared (>=0.99), retained {retained:.4f} of valid (>=0.95)",
    )
