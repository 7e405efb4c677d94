"""Frame-to-frame rotation refinement for monocular visual odometry."""

from .f2f import (
    BearingPairSet,
    ConstantMotion,
    F2FConfig,
    F2FSolution,
    Identity,
    Prior,
    adjust_pose,
    solve_f2f,
    translation_reliability,
)
from .se3 import CameraIntrinsics, RigidMotion

__all__ = [
    "BearingPairSet",
    "CameraIntrinsics",
    "ConstantMotion",
    "F2FConfig",
    "F2FSolution",
    "Identity",
    "Prior",
    "RigidMotion",
    "adjust_pose",
    "solve_f2f",
    "translation_reliability",
]
