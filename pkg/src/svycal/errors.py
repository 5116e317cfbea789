"""Exception types shared across the package.

Every error raised by svycal derives from :class:`SvycalError` so callers
can catch the whole family at once.  Numeric failures (singular systems,
non-convergence, infeasible constraint sets) are distinct classes because
callers such as the simulation harness treat them differently: an
infeasible calibration is recorded as a failed replication, a singular
covariance is a caller error.
"""

from __future__ import annotations


class SvycalError(Exception):
    """Base class for all svycal errors."""


class DimensionMismatch(SvycalError, ValueError):
    """Vector or matrix arguments have incompatible shapes."""


class NonFiniteInput(SvycalError, ValueError):
    """An input contains NaN or infinite entries."""


class SingularJacobian(SvycalError):
    """The score Jacobian is numerically singular."""


class SingularCovariance(SvycalError):
    """A covariance matrix cannot be inverted reliably."""


class SingularBlock(SvycalError):
    """A block of a variance decomposition cannot be inverted."""


class NoConvergence(SvycalError):
    """An iterative solver exhausted its iteration budget."""

    def __init__(self, message: str, iterations: int | None = None,
                 residual: float | None = None) -> None:
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


class InfeasibleConstraints(SvycalError):
    """No interior weight vector satisfies the calibration constraints.

    Raised when the zero vector is not in the interior of the convex hull
    of the constraint rows, so no strictly positive weights can zero the
    constraint totals.
    """


class RankDeficientConstraints(SvycalError, ValueError):
    """The stacked calibration constraint matrix is column rank deficient."""


class DegenerateTargets(SvycalError):
    """Tilt targets lie outside the achievable moment range of the data."""


class MalformedHeader(SvycalError, ValueError):
    """A CSV header is missing required columns or is otherwise unusable."""


class NonNumericCell(SvycalError, ValueError):
    """A CSV cell could not be parsed as a number."""

    def __init__(self, row: int, column: str, value: str) -> None:
        super().__init__(f"row {row}, column {column!r}: not a number: {value!r}")
        self.row = row
        self.column = column
        self.value = value


class WeightNonPositive(SvycalError, ValueError):
    """A design weight is zero or negative."""

    def __init__(self, row: int, value: float) -> None:
        super().__init__(f"row {row}: design weight must be positive, got {value}")
        self.row = row
        self.value = value


class SchemaError(SvycalError, ValueError):
    """A JSON document does not match its published schema."""


class AsymmetricCovariance(SvycalError, ValueError):
    """A covariance matrix is asymmetric beyond tolerance."""
