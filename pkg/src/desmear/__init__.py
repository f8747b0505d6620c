"""Self-annotation of smeared depth-sensor pixels from multi-view geometry."""

from .core import (
    LABEL_SMEARED,
    LABEL_UNKNOWN,
    LABEL_VALID,
    AnnotatorConfig,
    CameraModel,
    DatasetError,
    DegenerateGeometryError,
    DepthFrame,
    EvidenceMap,
    LabelMap,
    RigidPose,
    SceneSequence,
)

__version__ = "0.1.0"

__all__ = [
    "AnnotatorConfig",
    "CameraModel",
    "DatasetError",
    "DegenerateGeometryError",
    "DepthFrame",
    "EvidenceMap",
    "LabelMap",
    "LABEL_SMEARED",
    "LABEL_UNKNOWN",
    "LABEL_VALID",
    "RigidPose",
    "SceneSequence",
    "__version__",
]
