"""Geometry-supervised radiance fields for interior scenes."""

from .field import FieldConfig, RadianceField, positional_encode
from .geometry import CameraPose, Intrinsics, interpolate_pose, quat_slerp
from .losses import LossReport, LossWeights
from .scene import SceneBundle
from .trainer import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "CameraPose",
    "FieldConfig",
    "Intrinsics",
    "LossReport",
    "LossWeights",
    "RadianceField",
    "SceneBundle",
    "TrainConfig",
    "interpolate_pose",
    "positional_encode",
    "quat_slerp",
    "train",
    "__version__",
]
