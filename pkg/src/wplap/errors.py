"""Exception hierarchy shared by every module."""


class WplapError(Exception):
    """Base class for all package errors."""


class ConfigError(WplapError):
    """Malformed or incomplete configuration."""


class ParameterError(WplapError, ValueError):
    """A numeric parameter violates a precondition."""


class InvalidWeightError(WplapError, ValueError):
    """A weight evaluates to zero (or negative) where it must be positive."""


class DivergenceError(WplapError):
    """A weight integral is infinite where a finite value is required."""


class UnreachableValueError(WplapError):
    """h_x never reaches the requested value below the bracketing cap."""


class MetricViolationError(WplapError):
    """rho(z1, z3) + rho(z2, z3) vanished while rho(z1, z2) did not."""


class SolverError(WplapError):
    """Base class for solver failures."""


class StallError(SolverError):
    """No Armijo step was accepted after the backtracking budget."""


class NoNegativeMinimumError(SolverError):
    """The constrained minimizer did not reach negative energy."""


class SeedDegenerateError(SolverError):
    """The seed field has no positive part (or the scaling cap was hit)."""


class MountainPassError(SolverError):
    """Path deformation failed after all restarts."""
