"""Exception types shared across the package."""


class GridshareError(Exception):
    """Base class for all package errors."""


class ConfigurationError(GridshareError):
    """Bad grid spec, config file, or flag combination."""


class ValidationError(GridshareError):
    """Input values outside their documented domain."""


class IngestError(GridshareError):
    """Trip file unreadable or too many malformed rows."""


class TrainingError(GridshareError):
    """Optimization diverged or produced non-finite values."""


class CheckpointError(GridshareError):
    """Checkpoint unreadable or incompatible with the requested data."""
