"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain of an operation."""


class AliasingError(DomainError):
    """Collocation grid too coarse for the requested number of modes."""


class TruncationError(ArithmeticError):
    """A series could not be truncated within the allowed number of terms.

    ``bound`` holds the tail bound achieved with ``max_terms`` terms.
    """

    def __init__(self, message, bound=float("inf")):
        super().__init__(message)
        self.bound = bound


class EvaluationError(ArithmeticError):
    """A pointwise function produced a non-finite value."""


class HypothesisViolation(DomainError):
    """Step size outside the admissible range while strict mode is on."""
