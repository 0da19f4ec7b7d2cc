"""Capacities, hitting probabilities and harmonic-measure bounds for Brownian motion with drift."""

__version__ = "0.1.0"

from .errors import DomainError, ItocapError, NumericalError, SchemaError  # noqa: E402

__all__ = ["DomainError", "ItocapError", "NumericalError", "SchemaError", "__version__"]
