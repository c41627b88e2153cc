"""
Exception hierarchy for the recurrent ELM engine.

Note:
- Every error derives from RelmError so the CLI can map failures to exit codes
- Concrete errors also derive from the closest builtin so plain ValueError/ArithmeticError handlers keep working
"""

from typing import Optional


class RelmError(Exception):
    """Base class for all engine errors."""


class DimensionError(RelmError, ValueError):
    """Tensor extents or array shapes do not fit together."""


class InvalidSpecError(RelmError, ValueError):
    """An ArchitectureSpec or ExecConfig violates its invariants."""


class IngestionError(RelmError, ValueError):
    """A CSV file could not be turned into a RawSeries."""

    def __init__(
        self, message: str, row: Optional[int] = None, column: Optional[str] = None
    ):
        super().__init__(message)
        self.row = row
        self.column = column


class DatasetTooShortError(RelmError, ValueError):
    """The series is too short for the requested lag count."""


class DegenerateSeriesError(RelmError, ValueError):
    """The training portion has zero variance and cannot be z-scored."""


class SynthError(RelmError, ValueError):
    """Synthetic series parameters are out of range."""


class ExecutionEnvironmentError(RelmError, RuntimeError):
    """The worker pool could not be created or the Temporal frontend is unreachable."""


class NotAvailableError(RelmError):
    """A closed form or mode is not defined for the requested architecture."""


class UnderdeterminedError(RelmError, ValueError):
    """Fewer rows than unknowns in a least-squares problem."""


class SingularTriangularError(RelmError, ArithmeticError):
    """A triangular factor has a diagonal entry below the singularity threshold."""


class NumericError(RelmError, ArithmeticError):
    """Non-finite values reached a numeric routine."""


class ModelFormatError(RelmError, ValueError):
    """A model file cannot be read."""


class CorruptModelError(ModelFormatError):
    """The model file is truncated, malformed or inconsistent."""


class ModelVersionError(ModelFormatError):
    """The model file was written with an unknown format version."""


class DivergenceError(RelmError, ArithmeticError):
    """Iterative training produced a non-finite loss."""


class CountingModeError(RelmError, RuntimeError):
    """Counting interpreter requested under the release profile."""


class BarrierViolationError(RelmError, AssertionError):
    """A staged value was consumed in the same phase it was stored."""


class WriteDisciplineError(RelmError, AssertionError):
    """A hidden-state cell was written other than exactly once."""


class PlanError(RelmError, ValueError):
    """A bench plan file is malformed."""


class RunFailedError(RelmError):
    """A bench run failed; carries the run name."""

    def __init__(self, run_name: str, cause: BaseException):
        super().__init__(f"run '{run_name}' failed: {cause}")
        self.run_name = run_name
        self.cause = cause
