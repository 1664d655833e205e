"""Closest point calculus on banded Cartesian grids.

Construct closest point functions from level-set surface descriptions,
verify their defining properties numerically, and solve advection and
diffusion equations on embedded curves with the explicit closest point
method.
"""

from .band import BandedGrid, GridField, build_band, neighbor
from .cpfn import (
    ClosestPointFunction,
    OdeSolveConfig,
    cache_cp,
    circle_cp,
    circle_cp_hat,
    circle_cp_function,
    compose_cp,
    euclidean_cp_curve,
    euclidean_cp_function,
    intrinsic_cp_step,
    levelset_composed_cp,
    levelset_cp_codim1,
)
from .geometry import (
    LevelSetFn,
    LevelSetSurface,
    curve_point,
    curve_velocity,
    cylinder_paraboloid_curve,
    normal_matrix,
    sphere_plane_circle,
    tangent_field,
    tangent_projector,
    theta_of_point,
)
from .interp import CpExtension, InterpScheme, interpolate, weno1d
from .reference import advection_exact, arc_length, heat_exact, s_inverse
from .solver import ErrorReport, ExperimentConfig, initialize, run

__version__ = "0.1.0"

__all__ = [
    "BandedGrid",
    "GridField",
    "build_band",
    "neighbor",
    "ClosestPointFunction",
    "OdeSolveConfig",
    "cache_cp",
    "circle_cp",
    "circle_cp_hat",
    "circle_cp_function",
    "compose_cp",
    "euclidean_cp_curve",
    "euclidean_cp_function",
    "intrinsic_cp_step",
    "levelset_composed_cp",
    "levelset_cp_codim1",
    "LevelSetFn",
    "LevelSetSurface",
    "curve_point",
    "curve_velocity",
    "cylinder_paraboloid_curve",
    "normal_matrix",
    "sphere_plane_circle",
    "tangent_field",
    "tangent_projector",
    "theta_of_point",
    "CpExtension",
    "InterpScheme",
    "interpolate",
    "weno1d",
    "advection_exact",
    "arc_length",
    "heat_exact",
    "s_inverse",
    "ErrorReport",
    "ExperimentConfig",
    "initialize",
    "run",
    "__version__",
]
