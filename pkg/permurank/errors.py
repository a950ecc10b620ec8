"""Exception hierarchy shared by every permurank module."""

import logging

log = logging.getLogger(__name__)


class PermurankError(Exception):
    """Base class for all errors raised by permurank."""


class ContractViolationError(PermurankError, ValueError):
    """An argument broke the calling contract (shape, size, range of an index)."""


class DomainError(PermurankError, ValueError):
    """A numeric argument lies outside the domain of the operation."""


class SchemaError(PermurankError):
    """A file or config document does not match the expected schema."""


class TrainingFailureError(PermurankError, ArithmeticError):
    """Training produced a non-finite loss."""

    def __init__(self, message: str, epoch: int) -> None:
        """Store the failing epoch alongside the message.

        Args:
            message: Human readable description of the failure.
            epoch: Zero-based index of the epoch in which the loss became non-finite.

        """
        super().__init__(message)
        self.epoch = epoch
