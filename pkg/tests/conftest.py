"""Shared scene builders and session-scoped pipeline fixtures."""

from __future__ import annotations

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from desmear.annotator import annotate_sequence
from desmear.core import AnnotatorConfig
from desmear.simulator import default_scene_config, render_scene, scene_from_config


def rich_icp_scene_config(seed: int, rate: float = 0.0, band: int = 3,
                          lam=(0.5, 0.9), rng_offset: int = 1000) -> dict:
    """Geometry-rich scene (rotated box, two spheres, backdrop) on a short
    arc with inter-frame motion under 5 degrees / 50 mm."""
    rng = np.random.default_rng(rng_offset + seed)
    cfg = default_scene_config()
    cfg["seed"] = int(seed)
    cfg["camera"].update(
        {"fx": 128.0, "fy": 128.0, "cx": 64.0, "cy": 64.0, "width": 128, "height": 128}
    )
    cfg["smear"].update({"rate": rate, "edge_band_px": band, "lam": list(lam)})
    yaw = float(rng.uniform(20, 70))
    rot = Rotation.from_euler("y", yaw, degrees=True).as_matrix().reshape(-1).tolist()
    cfg["primitives"] = [
        {
            "kind": "box",
            "center": [float(rng.uniform(-80, 80)), float(rng.uniform(-60, 60)), 0.0],
            "size": [float(rng.uniform(250, 450)) for _ in range(3)],
            "rotation": rot,
        },
        {
            "kind": "sphere",
            "center": [float(rng.uniform(250, 420)), float(rng.uniform(-120, 120)),
                       float(rng.uniform(150, 450))],
            "radius": float(rng.uniform(120, 200)),
        },
        {
            "kind": "sphere",
            "center": [float(rng.uniform(-420, -250)), float(rng.uniform(-120, 120)),
                       float(rng.uniform(150, 450))],
            "radius": float(rng.uniform(120, 200)),
        },
        {"kind": "plane", "center": [0.0, 0.0, float(rng.uniform(1000, 1400))],
         "size": [5000.0, 5000.0]},
    ]
    arc = float(rng.uniform(15, 25))
    cfg["trajectory"].update(
        {"radius_mm": 800.0, "arc_deg": arc, "frames": 8, "height_mm": -250.0}
    )
    return cfg


def pole_scene_config() -> dict:
    """Thin columns at graded depths; hard for purely statistical filters."""
    cfg = default_scene_config()
    cfg["primitives"] = [
        {"kind": "box", "center": [0.0, 0.0, 0.0], "size": [400.0, 400.0, 300.0]},
        {"kind": "box", "center": [-320.0, 0.0, 350.0], "size": [25.0, 900.0, 25.0]},
        {"kind": "box", "center": [300.0, 0.0, 500.0], "size": [22.0, 900.0, 22.0]},
        {"kind": "box", "center": [80.0, 0.0, 780.0], "size": [30.0, 900.0, 30.0]},
        {"kind": "box", "center": [-120.0, 0.0, 600.0], "size": [25.0, 900.0, 25.0]},
        {"kind": "plane", "center": [0.0, 0.0, 3200.0], "size": [11000.0, 11000.0]},
    ]
    return cfg


def small_backdrop_scene_config() -> dict:
    """Backdrop barely larger than the box, so smears project past its edge
    into empty space (see-through-empty configurations)."""
    cfg = default_scene_config()
    cfg["primitives"][1] = {
        "kind": "plane", "center": [0.0, 0.0, 1200.0], "size": [1100.0, 1100.0]
    }
    return cfg


@pytest.fixture(scope="session")
def default_scene():
    scene, cam = scene_from_config(default_scene_config())
    seq, masks = render_scene(scene, cam)
    return seq, masks


@pytest.fixture(scope="session")
def default_annotation(default_scene):
    seq, _ = default_scene
    return annotate_sequence(seq, AnnotatorConfig())


@pytest.fixture(scope="session")
def clean_scene():
    cfg = default_scene_config()
    cfg["smear"]["rate"] = 0.0
    scene, cam = scene_from_config(cfg)
    seq, masks = render_scene(scene, cam)
    return seq, masks


@pytest.fixture(scope="session")
def pole_scene():
    scene, cam = scene_from_config(pole_scene_config())
    seq, masks = render_scene(scene, cam)
    return seq, masks


@pytest.fixture(scope="session")
def pole_annotation(pole_scene):
    seq, _ = pole_scene
    return annotate_sequence(seq, AnnotatorConfig())


@pytest.fixture(scope="session")
def empty_evidence_scene():
    scene, cam = scene_from_config(small_backdrop_scene_config())
    seq, masks = render_scene(scene, cam)
    return seq, masks


@pytest.fixture(scope="session")
def empty_evidence_annotation(empty_evidence_scene):
    seq, _ = empty_evidence_scene
    return annotate_sequence(seq, AnnotatorConfig())
