"""
Error taxonomy for the risk pipeline.
Every error carries the stage it came from and the CLI exit code it maps to.
"""

from typing import Any, Dict, Optional


class PipelineError(Exception):
    """Base error for every failure the pipeline reports to the user."""

    exit_code = 1

    def __init__(self, message: str, stage: Optional[str] = None, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.stage = stage
        self.details = details or {}

    def __str__(self):
        if self.stage:
            return f"[{self.stage}] {self.message}"
        return self.message


class ConfigError(PipelineError):
    """Invalid run configuration or environment."""
    exit_code = 2


class DataError(PipelineError):
    """Input data violates its schema or a stage precondition."""
    exit_code = 3


class NumericError(PipelineError):
    """A numerical routine could not produce a defined result."""
    exit_code = 4


class SchemaMismatchError(DataError):
    pass


class SingleClassError(DataError):
    pass


class ImputationError(DataError):
    pass


class UndefinedVifError(NumericError):
    pass


class KernelWidthError(NumericError):
    pass


def as_pipeline_error(error: Exception, stage: str) -> PipelineError:
    """Map an exception escaping a stage onto the taxonomy, keeping the stage name."""
    if isinstance(error, PipelineError):
        if error.stage is None:
            error.stage = stage
        return error
    message = f"{type(error).__name__}: {error}"
    details = {"exception_type": type(error).__name__}
    # numpy's LinAlgError is a ValueError; FloatingPointError is an ArithmeticError.
    if isinstance(error, (ArithmeticError, ValueError)):
        return NumericError(message, stage=stage, details=details)
    if isinstance(error, OSError):
        return DataError(message, stage=stage, details=details)
    return PipelineError(f"Unexpected {message}", stage=stage, details=details)
