"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: validation problems exit 2,
an infeasible privacy budget exits 3, numerical failures exit 4.
"""


class DpdfdError(Exception):
    """Base class for all package errors."""


class ValidationError(DpdfdError):
    """An argument violates a documented precondition."""


class DimensionError(ValidationError):
    """Array shapes do not line up."""


class DegenerateInputError(ValidationError):
    """Input is a degenerate case the operation cannot define (e.g. a
    zero gradient normalized with stability constant 0)."""


class InfeasibleBudgetError(DpdfdError):
    """The requested privacy budget cannot be met by any allowed setting."""


class NumericalError(DpdfdError):
    """A computation produced non-finite values."""
