"""Shared exception types. Every error carries a machine-readable code."""


class CofeError(Exception):
    """Base class; `code` is stable across releases, `message` is for humans."""

    code = "ERROR"

    def __init__(self, message, code=None):
        super().__init__(message)
        if code is not None:
            self.code = code

    @property
    def message(self):
        return str(self)


class ValidationError(CofeError):
    """A parameter or field failed validation; names the offending field."""

    code = "VALIDATION_ERROR"

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class RecordFormatError(CofeError):
    """Record file could not be parsed. Codes: MALFORMED_HEADER,
    SAMPLE_COUNT_MISMATCH, NON_FINITE_VALUES, BAD_FORMAT."""

    code = "BAD_FORMAT"


class ShapeError(CofeError):
    code = "SHAPE_MISMATCH"


class NonFiniteError(CofeError):
    code = "NON_FINITE"


class GraphError(CofeError):
    code = "GRAPH_ERROR"


class NoBeatsError(CofeError):
    code = "NO_BEATS"


class CheckpointError(CofeError):
    """Codes: BAD_MAGIC, VERSION_MISMATCH, CHECKSUM_MISMATCH, TRUNCATED."""

    code = "CHECKPOINT_ERROR"


class TrainingDiverged(CofeError):
    code = "TRAINING_DIVERGED"

    def __init__(self, message, last_good=None):
        super().__init__(message)
        self.last_good = last_good


class InfeasibleMixError(CofeError):
    code = "INFEASIBLE_CLASS_MIX"


class StoreError(CofeError):
    code = "STORE_ERROR"


class NotFoundError(CofeError):
    code = "NOT_FOUND"
