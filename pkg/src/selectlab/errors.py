"""Exception hierarchy shared by every module."""


class LabError(Exception):
    """Base class for all errors raised by selectlab."""


class DomainError(LabError, ValueError):
    """An argument lies outside the domain where the quantity is defined."""


class ValidationError(LabError, ValueError):
    """A table or distribution fails a structural check (e.g. a row is not stochastic)."""


class ConditioningError(LabError, ValueError):
    """Conditioning on an event of probability zero."""


class PreconditionError(LabError):
    """An environment-level assumption (e.g. communicating) does not hold."""


class AbductionError(LabError):
    """Evidence is inconsistent with a structural model, or does not pin down the answer."""


class InvertibilityError(LabError, ArithmeticError):
    """A matrix that must be inverted is singular beyond tolerance."""

    def __init__(self, message: str, condition_number: float = float("inf")):
        super().__init__(message)
        self.condition_number = condition_number


class ResourceError(LabError):
    """An enumeration would exceed its configured cap."""


class ConfigurationError(LabError):
    """A manifest, policy or memory description is incomplete or inconsistent."""
