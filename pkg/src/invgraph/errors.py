"""Exception taxonomy shared across the package.

Every failure the CLI can hit maps to one of these; `cli.main` translates
them to exit codes (NumericError -> 2, everything else -> 1).
"""


class InvgraphError(Exception):
    """Base class for all package errors."""


class ContractError(InvgraphError):
    """A documented precondition was violated by the caller."""


class ShapeError(ContractError):
    """Operand shapes incompatible for an operation."""

    def __init__(self, op: str, *shapes):
        self.op = op
        self.shapes = shapes
        rendered = " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {rendered}")


class NumericError(InvgraphError):
    """Non-finite values or a failed numerical check."""


class ParseError(InvgraphError):
    """Malformed dataset or config file; carries the offending line."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(InvgraphError):
    """Structurally parseable but semantically invalid input."""


class EmptyDatasetError(InvgraphError):
    """A dataset file with no graphs at all."""


class SpecError(InvgraphError):
    """A generator spec that contradicts itself (e.g. motif larger than base)."""


class UndefinedMetricError(InvgraphError):
    """Metric undefined for the given labels (e.g. single-class ROC-AUC)."""


class CheckpointError(InvgraphError):
    """Checkpoint file is corrupt or inconsistent with the model/data."""
