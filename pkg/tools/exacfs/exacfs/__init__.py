"""Class-incremental learning with class-wise feature significance distillation."""

from .main import main

__all__ = ["main"]
