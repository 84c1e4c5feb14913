"""Exception hierarchy.

``ValidationError`` covers bad inputs (CLI exit code 1); ``ComputationError``
covers failures while estimating from valid inputs (CLI exit code 2).
"""


class MRPError(Exception):
    """Base class for all package errors."""


class ValidationError(MRPError, ValueError):
    """Input violates a documented contract."""


class ComputationError(MRPError, RuntimeError):
    """A computation on valid inputs could not complete."""


class DuplicateFactor(ValidationError):
    pass


class InvalidFactor(ValidationError):
    pass


class UnknownLevel(ValidationError):
    pass


class NegativeWeight(ValidationError):
    pass


class DuplicateCell(ValidationError):
    pass


class ZeroTotalWeight(ValidationError):
    pass


class MalformedRow(ValidationError):
    pass


class DayOutOfRange(ValidationError):
    pass


class InconsistentDemographics(ValidationError):
    pass


class MissingParty(ValidationError):
    pass


class MissingProbability(ValidationError):
    pass


class OverlappingWindows(ValidationError):
    pass


class MissingEndpoint(ValidationError):
    pass


class NoCommonDays(ValidationError):
    pass


class ConfigError(ValidationError):
    pass


class NonConvergence(ComputationError):
    """Inner optimizer did not reach the gradient tolerance.

    ``grad_norm`` is the final gradient inf-norm; ``day`` is filled in when
    the failure happens inside a daily series.
    """

    def __init__(self, message, grad_norm=float("nan"), iterations=0, day=None):
        super().__init__(message)
        self.grad_norm = grad_norm
        self.iterations = iterations
        self.day = day

    def __str__(self):
        base = super().__str__()
        if self.day is not None:
            return f"day {self.day}: {base}"
        return base
