"""Exception hierarchy shared by every ecnn module."""

from typing import Optional


class EcnnError(Exception):
    """Base class for all errors raised by the toolkit."""


class InvalidArgumentError(EcnnError, ValueError):
    """An argument violates a documented precondition."""


class ParseError(InvalidArgumentError):
    """Malformed matrix, checkpoint or CSV text."""

    def __init__(
        self, message: str, source: Optional[str] = None, row: Optional[int] = None
    ):
        self.source = source
        self.row = row
        prefix = ""
        if source:
            prefix += f"{source}: "
        if row is not None:
            prefix += f"row {row}: "
        super().__init__(prefix + message)


class DegenerateMatrixError(InvalidArgumentError):
    """A code matrix has duplicate column partitions; resample and retry."""


class SearchStuckError(EcnnError, RuntimeError):
    """Rejection sampling ran out of attempts."""


class NoRootError(EcnnError, ArithmeticError):
    """A residual has no root on the searched interval."""


class TrainingDivergedError(EcnnError, RuntimeError):
    """The training loss became NaN or infinite."""
