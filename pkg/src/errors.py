"""
Exception hierarchy for the GAN filter-transfer toolkit.

Errors that end a command-line run derive from ``GanTransferError`` and carry
the process exit code the CLI reports. Numerical-contract violations raised by
the tensor and modulation layers derive from the matching builtin exception so
library callers can catch them without importing this module.

License: MIT License
"""

from typing import Optional


class GanTransferError(Exception):
    """Base class for errors that abort a run."""

    exit_code: int = 1


class ConfigError(GanTransferError):
    """Invalid configuration file, flag value or partition."""

    exit_code = 2


class DataError(GanTransferError):
    """Unreadable, empty or inconsistent image corpus."""

    exit_code = 3


class NumericAbort(GanTransferError):
    """
    Training produced a non-finite loss or gradient.

    Attributes:
        parameter (Optional[str]): Registry name of the offending parameter
        iteration (Optional[int]): Training iteration at which the abort happened
    """

    exit_code = 4

    def __init__(self, message: str, parameter: Optional[str] = None,
                 iteration: Optional[int] = None):
        super().__init__(message)
        self.parameter = parameter
        self.iteration = iteration


class CheckpointError(GanTransferError):
    """Missing, truncated or structurally invalid checkpoint."""

    exit_code = 5


class TransferMismatchError(CheckpointError):
    """Source checkpoint is incompatible with the target general part."""


class ShapeError(ValueError):
    """Tensor dimensions do not satisfy an operation's contract."""


class DomainError(ArithmeticError):
    """
    A value fell outside the mathematical domain of an operation.

    Attributes:
        channel (int): Output channel whose demodulation radicand was not positive
    """

    def __init__(self, message: str, channel: int):
        super().__init__(message)
        self.channel = channel


class GraphError(RuntimeError):
    """Misuse of the autodiff graph (double backward, disconnected input)."""
