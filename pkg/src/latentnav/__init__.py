"""Termination-aware latent world-model RL for mapless 2D navigation."""

__version__ = "0.1.0"

from .sim import Obstacle, RobotState, Scene, SimConfig
from .scenario import ScenarioConfig
from .observation import CameraConfig
from .rewards import RewardConfig, TerminationConfig
from .nets import NetConfig, WorldModel

__all__ = [
    "Obstacle",
    "RobotState",
    "Scene",
    "SimConfig",
    "ScenarioConfig",
    "CameraConfig",
    "RewardConfig",
    "TerminationConfig",
    "NetConfig",
    "WorldModel",
    "__version__",
]
