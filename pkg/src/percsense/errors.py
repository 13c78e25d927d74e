"""Exception hierarchy shared across the package.

``ValidationError`` maps to CLI exit code 2, ``StageError`` to exit code 3.
"""


class PercsenseError(Exception):
    """Base class for all package errors."""


class ValidationError(PercsenseError):
    """Bad input: schema violations, missing files, inconsistent shapes."""


class SchemaError(ValidationError):
    """Manifest or config does not match the documented schema.

    ``field_path`` points at the offending entry, e.g. ``images[2].height``.
    """

    def __init__(self, field_path, message):
        self.field_path = field_path
        super().__init__(f"{field_path}: {message}")


class DegenerateColumnError(PercsenseError):
    """A data column has zero variance where spread is required."""


class UndefinedSensitivityError(PercsenseError):
    """Sensitivity requested for an identical image pair (zero denominator)."""


class CapabilityError(PercsenseError):
    """A density model cannot supply the requested quantity."""


class RankDeficiencyError(PercsenseError):
    """Design matrix is rank deficient and no regularized fallback was allowed."""


class ConvergenceError(PercsenseError):
    """Iterative solver failed to converge within its iteration cap."""


class StageError(PercsenseError):
    """A pipeline stage failed; partial outputs are preserved on disk."""

    def __init__(self, stage, message):
        self.stage = stage
        super().__init__(f"stage '{stage}': {message}")
