"""Exception hierarchy.

Validation problems derive from :class:`ValidationError` (CLI exit code 1),
numerical failures from :class:`NumericalError` (CLI exit code 2).
"""


class PeumError(Exception):
    pass


class ValidationError(PeumError, ValueError):
    pass


class DomainError(ValidationError):
    pass


class SmoothnessError(ValidationError):
    pass


class PreconditionError(ValidationError):
    pass


class NumericalError(PeumError, ArithmeticError):
    pass


class RootFindingError(NumericalError):
    pass


class ConvergenceError(NumericalError):
    pass


class NonContractionError(NumericalError):
    pass


class PeriodicCriticalOrbitError(PreconditionError):
    pass


class NotMarkovError(PreconditionError):
    pass


class ResidualJumpError(NumericalError):
    pass


class BoundViolationError(NumericalError):
    pass
