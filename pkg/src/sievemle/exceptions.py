"""Exception types shared across the package."""


class SupportError(ValueError):
    """A value lies outside the support of a distribution or the unit cube."""


class RangeError(ValueError):
    """A requested target is outside the attainable range (e.g. Spearman rho)."""


class FeasibilityError(ValueError):
    """Sieve weights violate the simplex or slice-sum constraints."""


class ConvergenceError(RuntimeError):
    """An iterative procedure (IPF, optimizer) failed to converge."""


class SingularInformationError(RuntimeError):
    """An information or Gram matrix is singular beyond repair."""


class DataError(ValueError):
    """Input data is malformed (parsing, duplicate dates, empty files)."""
