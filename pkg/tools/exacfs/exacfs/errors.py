"""Exception hierarchy for the exacfs engine."""

from typing import List, Optional, Tuple


class ExacfsError(Exception):
    """Base class for every error raised by the engine."""


class DimensionError(ExacfsError, ValueError):
    """A tensor shape or rank does not fit the operation."""


class ContractError(ExacfsError, ValueError):
    """A precondition of an operation was violated."""


class ConfigError(ExacfsError):
    """Configuration failed to load or validate.

    Args:
        problems: (field_path, message) pairs, e.g. ("network.stages.0", "...")
    """

    def __init__(self, problems: List[Tuple[str, str]]):
        self.problems = problems
        super().__init__("; ".join(f"{path}: {msg}" if path else msg for path, msg in problems))


class FormatError(ExacfsError):
    """A file could not be parsed in its expected format."""

    def __init__(self, filename: str, message: str, line: Optional[int] = None):
        self.filename = filename
        self.line = line
        where = f"{filename}:{line}" if line is not None else filename
        super().__init__(f"{where}: {message}")
