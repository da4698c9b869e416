"""Exception hierarchy for conetest.

Input-contract violations raise subclasses of ``ValueError`` so that callers
doing generic validation keep working; numerical failures (non-convergence,
unreachable probability targets) are ``RuntimeError`` subclasses.
"""


class ConeTestError(Exception):
    """Base class for all conetest errors."""


class TableError(ConeTestError, ValueError):
    """Malformed contingency-table input (counts, dims, file content)."""


class SpecError(ConeTestError, ValueError):
    """Invalid parameterization or cone specification."""


class NotPositiveDefiniteError(ConeTestError, ValueError):
    """A matrix required to be symmetric positive definite is not."""


class FitError(ConeTestError, RuntimeError):
    """Constrained maximum-likelihood fitting failed to converge."""


class SolveError(ConeTestError, RuntimeError):
    """A critical-value equation has no solution in the admissible range."""
