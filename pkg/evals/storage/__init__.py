"""Storage API for benchmark results."""

from .database import EvalStorage

__all__ = ["EvalStorage"]
