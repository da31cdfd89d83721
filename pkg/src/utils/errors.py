"""
Exception hierarchy for the confound-saliency pipeline.

Every error carries the process exit code the command line reports for it:
2 for invalid input (bad files, shapes, columns, arguments) and 3 for numeric
failures (singular designs, diverging training, failed accuracy gate).
"""

from typing import Optional

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERIC = 3


class ConfoundSaliencyError(Exception):
    """Base class for all pipeline errors."""
    exit_code: int = EXIT_VALIDATION


class InputValidationError(ConfoundSaliencyError):
    """Input did not satisfy a schema, shape or argument contract."""
    exit_code = EXIT_VALIDATION


class ShapeError(InputValidationError):
    """Tensor or array extents do not agree."""


class FormatError(InputValidationError):
    """A file on disk is malformed."""

    def __init__(self, message: str, field: Optional[str] = None):
        self.field = field
        super().__init__(f"{message} (field: {field})" if field else message)


class ContractError(InputValidationError):
    """An operation was called outside its precondition."""


class FeatureIndexError(InputValidationError, IndexError):
    """Feature index outside [0, M)."""


class UnknownColumnError(InputValidationError, KeyError):
    """A requested dataset column does not exist."""

    def __init__(self, column: str, available: Optional[list] = None):
        self.column = column
        self.available = list(available or [])
        super().__init__(column)

    def __str__(self) -> str:
        hint = f"; available: {', '.join(self.available)}" if self.available else ""
        return f"unknown column '{self.column}'{hint}"


class MaskLengthError(ShapeError):
    """Confound mask length differs from the model's feature dimension."""


class DegreesOfFreedomError(InputValidationError):
    """Too few observations for the requested regression or test."""


class EmptyInputError(InputValidationError):
    """An aggregation received no elements."""


class NumericFailure(ConfoundSaliencyError):
    """A computation could not produce a finite, well-defined result."""
    exit_code = EXIT_NUMERIC


class SingularDesignError(NumericFailure):
    """The GLM design matrix is rank deficient."""

    def __init__(self, column: str):
        self.column = column
        super().__init__(f"design matrix is rank deficient: column '{column}' is collinear")


class TrainingDivergedError(NumericFailure):
    """Training loss became non-finite."""

    def __init__(self, epoch: int, loss: float):
        self.epoch = epoch
        self.loss = loss
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})")


class AccuracyGateError(NumericFailure):
    """Training accuracy fell below the configured gate."""

    def __init__(self, accuracy: float, gate: float):
        self.accuracy = accuracy
        self.gate = gate
        super().__init__(f"training accuracy {accuracy:.4f} is below the gate {gate:.4f}")


class StageFailedError(ConfoundSaliencyError):
    """A pipeline stage failed; keeps the exit code of the underlying error."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", EXIT_VALIDATION)
        super().__init__(f"stage '{stage}' failed: {cause}")
