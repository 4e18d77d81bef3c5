"""Planning and estimation toolkit over height-sliced occupancy maps.

Modules: ``grid`` (voxels, traversability, distance field, line of sight),
``guide`` (roadmap, A*, known map), ``vo`` (velocity-obstacle controller),
``planner`` (fusion loop, episodes, datasets), ``sim`` (scenes, metrics),
``deadreckon`` (wheel and magnetometer odometry), ``occmetrics`` (losses),
``config``, ``bench``, ``render`` and ``cli``.
"""
from ._validation import (
    CalibrationError,
    ConfigurationError,
    DomainError,
    GenerationError,
    NumericalError,
    OccnavError,
    StructuralError,
)
from .config import RunConfig
from .geometry import Pose

__version__ = "0.1.0"

__all__ = [
    "CalibrationError",
    "ConfigurationError",
    "DomainError",
    "GenerationError",
    "NumericalError",
    "OccnavError",
    "Pose",
    "RunConfig",
    "StructuralError",
    "__version__",
]
