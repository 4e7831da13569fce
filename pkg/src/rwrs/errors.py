"""Shared error types for resource limits and degenerate statistics."""

__all__ = [
    "BudgetExceededError",
    "RejectionRateError",
    "DegenerateRatioError",
]


class BudgetExceededError(RuntimeError):
    """An enumeration or simulation exceeded its declared resource budget."""


class RejectionRateError(RuntimeError):
    """Too many near-singular replicas were rejected; fineness is too small."""


class DegenerateRatioError(RuntimeError):
    """A ratio denominator is statistically indistinguishable from zero."""
