"""Continuous-time lidar-inertial odometry on a B-spline trajectory."""

from .evaluate import ape
from .odometry import Odometry, RunConfig, run_dataset
from .simulator import aggressive_scenario, benign_scenario, generate
from .spline import SplineTrajectory
from .state import HybridState
from .voxel import MapConfig, VoxelMap

__version__ = "0.1.0"

__all__ = [
    "Odometry",
    "RunConfig",
    "run_dataset",
    "ape",
    "benign_scenario",
    "aggressive_scenario",
    "generate",
    "SplineTrajectory",
    "HybridState",
    "VoxelMap",
    "MapConfig",
    "__version__",
]
