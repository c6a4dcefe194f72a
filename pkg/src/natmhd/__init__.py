"""Exact ideal-MHD flows in natural coordinates.

The map x = gamma(t, xi) sends natural coordinates (time, magnetic-line
parameter xi1, line labels xi2, xi3) to Cartesian space.  Trajectories are
the t-lines and magnetic lines are the xi1-lines.
"""

from ._kernels import BACKEND
from .diffgeo import (
    CallableMap,
    DomainBox,
    DomainError,
    Point4,
    SingularMetricError,
    StencilConfig,
    SymbolicMap,
    christoffel,
    jacobian,
    metric,
    partial,
)
from .solution import (
    GridSpec,
    PressureModel,
    ResidualReport,
    Solution,
    cauchy_check,
    eulerian_fields,
    eulerian_residual,
    residual_compressible,
    residual_incompressible,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "CallableMap",
    "DomainBox",
    "DomainError",
    "GridSpec",
    "Point4",
    "PressureModel",
    "ResidualReport",
    "SingularMetricError",
    "Solution",
    "StencilConfig",
    "SymbolicMap",
    "cauchy_check",
    "christoffel",
    "eulerian_fields",
    "eulerian_residual",
    "jacobian",
    "metric",
    "partial",
    "residual_compressible",
    "residual_incompressible",
]
