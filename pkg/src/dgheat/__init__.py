"""cG(s)dG(r) finite elements for the heat equation with measure-valued initial data.

Submodules
----------
mesh, fem       triangulations and P1/P2 Lagrange spaces
measure         Dirac atoms plus densities, paired with FE test functions
dg              discontinuous Galerkin time stepping
spectral        eigenfunction-series reference solutions on rectangles
study           convergence and smoothing studies, CSV/JSON reports
"""
from .dg import (DgSolution, PartitionError, TimePartition, build_partition, scalar_transfer,
                 solve_heat, validate_partition)
from .fem import FeFunction, FeSpace, SolverError, l2_project, norm, ritz_project
from .measure import MeasureData, MeasureError, pair_with_fe
from .mesh import Mesh, MeshError, Subdomain, build_uniform_rect_mesh, refine_uniform
from .spectral import TruncationError, exact_solution, exact_value, semidiscrete_solution, semidiscrete_value
from .study import RateReport, StudyConfig, fit_rate

__version__ = "0.1.0"

__all__ = [
    "DgSolution", "PartitionError", "TimePartition", "build_partition", "scalar_transfer", "solve_heat",
    "validate_partition", "FeFunction", "FeSpace", "SolverError", "l2_project", "norm", "ritz_project",
    "MeasureData", "MeasureError", "pair_with_fe", "Mesh", "MeshError", "Subdomain",
    "build_uniform_rect_mesh", "refine_uniform", "TruncationError", "exact_solution", "exact_value",
    "semidiscrete_solution", "semidiscrete_value", "RateReport", "StudyConfig", "fit_rate",
]
