"""Depth and odometry evaluation plus synthetic-data adaptation for driving datasets."""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    CameraIntrinsics,
    DepthMap,
    DepthMetrics,
    OdomMetrics,
    PointCloud,
    RigidTransform,
    Trajectory,
    compose,
    median,
)
from .errors import ConfigError, EvaluationError, FormatError, ManifestError, SavesError  # noqa: E402

__all__ = [
    "CameraIntrinsics", "DepthMap", "DepthMetrics", "OdomMetrics", "PointCloud", "RigidTransform",
    "Trajectory", "compose", "median",
    "ConfigError", "EvaluationError", "FormatError", "ManifestError", "SavesError",
]
