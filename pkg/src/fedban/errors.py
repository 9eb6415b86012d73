"""Exception hierarchy shared across the package."""


class FedbanError(Exception):
    """Base class for all errors raised by fedban."""


class NotPositiveDefinite(FedbanError, ArithmeticError):
    pass


class NegativeQuadraticForm(FedbanError, ArithmeticError):
    pass


class DimensionMismatch(FedbanError, ValueError):
    pass


class GenerationFailure(FedbanError, RuntimeError):
    pass


class MeanOutOfRange(FedbanError, ValueError):
    pass


class ActionNotInSet(FedbanError, ValueError):
    pass


class InvalidBudget(FedbanError, ValueError):
    pass


class TreeFull(FedbanError, RuntimeError):
    """More releases were requested than the tree was planned for."""


class EmptyTree(FedbanError, RuntimeError):
    pass


class BoundViolation(FedbanError, ValueError):
    pass


class Disconnected(FedbanError, ValueError):
    pass


class MissingAxis(FedbanError, ValueError):
    pass


class ParseError(FedbanError, ValueError):
    pass


class ValidationError(FedbanError, ValueError):
    """Raised with every violated invariant of a config, not just the first."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))
