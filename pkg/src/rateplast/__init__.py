"""Finite element solver for a rate-type elastic-perfectly plastic solid with plastic heating."""

from .constitutive import MaterialParams, RegularizationConfig, Variant
from .errors import (
    ConfigurationError,
    InvalidArgumentError,
    MeshFormatError,
    NonConvergenceError,
    NumericalError,
    RatePlastError,
    SolverError,
    ValidationError,
)
from .mechanics import Loads, MechState, TimeGrid
from .mesh import Mesh, build_interval_mesh, build_plate_with_hole, load_triangle_mesh
from .scenarios import ScenarioConfig, convergence_study, run_1d_bar, run_2d_plate, simulate

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError",
    "InvalidArgumentError",
    "Loads",
    "MaterialParams",
    "MechState",
    "Mesh",
    "MeshFormatError",
    "NonConvergenceError",
    "NumericalError",
    "RatePlastError",
    "RegularizationConfig",
    "ScenarioConfig",
    "SolverError",
    "TimeGrid",
    "ValidationError",
    "Variant",
    "build_interval_mesh",
    "build_plate_with_hole",
    "convergence_study",
    "load_triangle_mesh",
    "run_1d_bar",
    "run_2d_plate",
    "simulate",
]
