"""Closed-form building blocks of a center-based monocular 3D detector:
depth codecs, depth losses, 2D-to-3D center geometry, target encoding and
KITTI-style evaluation."""

from .depth_codec import (
    DepJointConfig,
    DepJointPrediction,
    DiscretizationConfig,
    EigenConfig,
    OrdinalPrediction,
)
from .evaluation import EvalConfig, EvalReport, evaluate, evaluate_metrics
from .geometry import Cuboid3D, backproject, cuboid_corners, project
from .kitti_io import CameraCalibration, ObjectLabel, parse_calibration, parse_label_line
from .targets import FeatureGridMeta, ReferenceAreaConfig, decode_objects, encode_targets

__version__ = "0.1.0"

__all__ = [
    "CameraCalibration",
    "Cuboid3D",
    "DepJointConfig",
    "DepJointPrediction",
    "DiscretizationConfig",
    "EigenConfig",
    "EvalConfig",
    "EvalReport",
    "FeatureGridMeta",
    "ObjectLabel",
    "OrdinalPrediction",
    "ReferenceAreaConfig",
    "backproject",
    "cuboid_corners",
    "decode_objects",
    "encode_targets",
    "evaluate",
    "evaluate_metrics",
    "parse_calibration",
    "parse_label_line",
    "project",
]
