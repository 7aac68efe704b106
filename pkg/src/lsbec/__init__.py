"""Ground states of Gross-Pitaevskii type problems on curved 2D domains:
level-set geometry, ghost-point extrapolation by constant extension, and a
two-phase backward-Euler normalized gradient flow."""

from .config import ExperimentConfig, parse_config, serialize_config
from .flow import FlowConfig, ModelSpec, build_bundle, compute_excited_state, run_two_phase
from .geometry import (Circle, CSGDifference, CSGIntersection, Ellipse, Grid2D, HalfPlane,
                       LShape, Rectangle)
from .operators import Potential

__version__ = "0.1.0"

__all__ = ["ExperimentConfig", "parse_config", "serialize_config", "FlowConfig", "ModelSpec",
           "build_bundle", "compute_excited_state", "run_two_phase", "Circle", "CSGDifference",
           "CSGIntersection", "Ellipse", "Grid2D", "HalfPlane", "LShape", "Rectangle",
           "Potential"]
