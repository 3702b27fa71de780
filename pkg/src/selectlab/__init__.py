"""Betting-goal laboratory: exact regret bounds, world-model recovery and
memory-aliasing checks over finite MDPs and POMDPs."""

from selectlab.errors import (
    AbductionError,
    ConditioningError,
    ConfigurationError,
    DomainError,
    InvertibilityError,
    LabError,
    PreconditionError,
    ResourceError,
    ValidationError,
)

__version__ = "0.1.0"

__all__ = [
    "AbductionError",
    "ConditioningError",
    "ConfigurationError",
    "DomainError",
    "InvertibilityError",
    "LabError",
    "PreconditionError",
    "ResourceError",
    "ValidationError",
    "__version__",
]
