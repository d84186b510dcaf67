"""Weighted degenerate p-Laplacian with concave-convex nonlinearity: weight
conditions, quasi-metric, discrete energy, two-solution solver and checks."""

__version__ = "0.1.0"

from .errors import (ConfigError, DivergenceError, InvalidWeightError, MetricViolationError,
                     MountainPassError, NoNegativeMinimumError, ParameterError,
                     SeedDegenerateError, SolverError, StallError, UnreachableValueError,
                     WplapError)
from .functional import (EnergyModel, ProblemParams, embedding_constant, energy,
                         fibering_threshold, geometry_constants, mp_radius, residual,
                         sphere_bound)
from .grid import Field, build_grid, load_field, save_field
from .quasimetric import QuasiMetricSpace, h, h_inv, quasi_triangle_constant, rho
from .solver import SolverConfig, solve
from .weights import (Weight, ap_constant, balance_constant, dyadic_family, parse_weight,
                      validate_exponents, weight_report)

__all__ = [name for name in dir() if not name.startswith("_")]
