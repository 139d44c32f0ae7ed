"""Biased random walk on random spanning trees of the two-row ladder."""

__version__ = "0.1.0"

from .closed_form import DIVERGENT, DomainError, ModelParams, speed  # noqa: E402

__all__ = ["DIVERGENT", "DomainError", "ModelParams", "speed", "__version__"]
