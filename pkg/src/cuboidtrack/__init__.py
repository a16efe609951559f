"""Category-level 6-DoF cuboid pose tracking with uncertainty-aware filtering."""

from .errors import CuboidTrackError
from .geometry import CameraIntrinsics, Cuboid, CuboidDimensions, RigidTransform
from .metrics import MetricReport, iou3d
from .tracker import Observation, Tracker, TrackerConfig

__all__ = [
    "CameraIntrinsics",
    "Cuboid",
    "CuboidDimensions",
    "CuboidTrackError",
    "MetricReport",
    "Observation",
    "RigidTransform",
    "Tracker",
    "TrackerConfig",
    "iou3d",
]

__version__ = "0.1.0"
