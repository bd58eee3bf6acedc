"""Exception types shared across the toolkit."""


class AuditError(Exception):
    """Base class for all toolkit errors."""


class CohortFormatError(AuditError):
    """A cohort record violates the trajectory file schema or its invariants."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class EmbeddingTableError(AuditError):
    """Embedding table file is malformed (arity mismatch, duplicates, bad header)."""


class UnknownCodeError(AuditError):
    """A code id has no embedding and the table policy is 'error'."""


class UndefinedCosineError(AuditError):
    """Cosine distance requested against a stored zero vector."""


class DegenerateInputError(AuditError):
    """Input on which the requested quantity is undefined (e.g. empty sequence)."""


class CapabilityError(AuditError):
    """A model was asked for an operation it does not declare."""


class ReplayFixtureError(AuditError):
    """Replay fixture is missing a key or stores a mismatched record."""


class DegenerateLabelsError(AuditError):
    """Metric or probe requires both classes but got a single-class input."""


class BridgeProtocolError(AuditError):
    """The bridge subprocess answered with a protocol-level error."""

    def __init__(self, code, message):
        super().__init__(f"{code}: {message}")
        self.code = code
