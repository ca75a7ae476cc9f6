"""Exception hierarchy shared across the pipeline.

Each family maps to a distinct CLI exit code so shell callers can tell
schema problems from data problems from numeric blow-ups.
"""


class FlowgadError(Exception):
    """Base class for all pipeline errors."""

    exit_code = 1


class SchemaError(FlowgadError):
    """Input does not match the declared schema or configuration."""

    exit_code = 2


class DataError(FlowgadError):
    """Input data is structurally valid but unusable (empty, degenerate)."""

    exit_code = 3


class ArtifactError(DataError):
    """A required on-disk artifact is missing or incompatible."""


class NumericError(FlowgadError):
    """Non-finite values or numeric failure during optimization/scoring."""

    exit_code = 4
