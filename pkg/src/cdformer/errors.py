"""Exception classes shared across the package.

The CLI maps each class to a distinct exit code, so raise the most
specific one that applies.
"""


class CdformerError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(CdformerError):
    """Operand shapes are inconsistent with an operation's contract."""


class ConfigurationError(CdformerError):
    """A configuration value is invalid or internally inconsistent."""


class ContractError(CdformerError):
    """An internal precondition was violated (caller misuse, not user data)."""


class DataError(CdformerError):
    """Input data violates a structural requirement (too short, empty, ...)."""


class IngestionError(CdformerError):
    """A data file could not be ingested; the message names the location."""


class TrainingDivergedError(CdformerError):
    """Training produced non-finite values; the last good state is attached."""

    def __init__(self, message, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint
