"""Exception hierarchy shared by the numerical modules."""
from __future__ import annotations


class RetentionStreamError(Exception):
    """Base class for all errors raised by the package."""


class PreconditionError(RetentionStreamError, ValueError):
    """An operation was called with arguments outside its contract."""


class DomainError(RetentionStreamError, ValueError):
    """A scalar argument lies outside its mathematical domain."""


class ShapeMismatchError(RetentionStreamError, ValueError):
    """Array dimensions or sequence lengths do not agree."""


class NumericalError(RetentionStreamError, ArithmeticError):
    """A computation overflowed, became non-finite or hit a singular system."""


class ConfigError(RetentionStreamError, ValueError):
    """The scenario configuration is invalid."""


__all__ = [
    "RetentionStreamError",
    "PreconditionError",
    "DomainError",
    "ShapeMismatchError",
    "NumericalError",
    "ConfigError",
]
