"""Adaptive coupling of bond-based peridynamics with local finite elements."""

from .errors import MorphPDError

__version__ = "0.1.0"

__all__ = ["MorphPDError", "__version__"]
