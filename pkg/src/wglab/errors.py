"""Exception taxonomy.

Validation-type errors mean the input itself is unusable (exit code 1 in the
CLI); numerical-type errors mean the computation could not reach its stated
accuracy (exit code 2).
"""


class WglabError(Exception):
    """Base class for all package errors."""


class ValidationError(WglabError):
    """Malformed or contract-violating input."""


class DomainError(ValidationError):
    """Argument outside the mathematical domain of an operation."""


class NumericalError(WglabError):
    """A computation failed to converge or meet its accuracy target."""


class TailMassError(NumericalError):
    """Grid too narrow: distribution tail mass outside the grid is too large."""


class CoverageError(NumericalError):
    """Sampled values leave the grid too often for grid-based evaluation."""


class ConstructionError(NumericalError):
    """A derived object (basis, family) could not be built soundly."""
