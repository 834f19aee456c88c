"""Exception types shared across the pipeline."""


class CofactError(Exception):
    """Base class for all package errors."""


class ConfigurationError(CofactError):
    """Invalid model, training, or decoding configuration."""


class LengthError(CofactError):
    """A token sequence exceeds a configured maximum length."""


class PartitionError(CofactError):
    """A source document cannot be split into important/irrelevant parts."""


class CheckpointError(CofactError):
    """A checkpoint is corrupted or incompatible with the requester."""


class NumericError(CofactError):
    """A loss or gradient became non-finite."""


class GenerationError(CofactError):
    """The corpus generator cannot satisfy its constraints."""


class MetricError(CofactError):
    """A metric received degenerate input."""
