"""Angle-aware coverage control for camera drones with gimbals."""

from .config import ScenarioConfig, load_config
from .controller import ControllerParams
from .engine import Engine
from .field import GridSpec, ImportanceField
from .geometry import CameraParams, Cell, DroneState

__all__ = [
    "CameraParams", "Cell", "ControllerParams", "DroneState", "Engine", "GridSpec",
    "ImportanceField", "ScenarioConfig", "load_config",
]
