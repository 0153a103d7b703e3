"""Shared exception hierarchy.

Every domain error raised by this package derives from HopchainError so
callers (and the CLI) can distinguish domain failures from programming
errors.
"""


class HopchainError(Exception):
    """Base class for all domain errors raised by hopchain."""


class MalformedChain(HopchainError):
    """Chain text does not conform to the chain grammar."""


class EmptyText(HopchainError):
    """An embedding was requested for empty (or whitespace-only) text."""


class ProviderUnavailable(HopchainError):
    """The embedding/control service could not be reached or misbehaved."""


class DuplicatePassageId(HopchainError):
    """A corpus contains the same passage id more than once."""


class DimensionMismatch(HopchainError):
    """A vector's dimension does not match the index dimension."""


class CorruptIndex(HopchainError):
    """A persisted index file failed structural or checksum validation."""


class SchemaError(HopchainError):
    """A dataset record is malformed; carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DanglingGoldReference(HopchainError):
    """An instance references a gold passage id absent from the corpus."""


class UnknownInstanceId(HopchainError):
    """A trace references an instance id absent from the dataset."""
