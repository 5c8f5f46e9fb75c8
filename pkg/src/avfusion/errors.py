"""Exception types shared across the package."""


class AvFusionError(Exception):
    """Base class for all package errors."""


class DimensionError(AvFusionError, ValueError):
    """Operand shapes do not agree."""


class DataFormatError(AvFusionError, ValueError):
    """A feature/label file violates the corpus format."""


class CheckpointError(AvFusionError, ValueError):
    """A checkpoint file is malformed or does not match the requested model."""


class ConfigError(AvFusionError, ValueError):
    """An experiment configuration is invalid."""


class DegenerateSeriesError(AvFusionError, ValueError):
    """A metric is undefined for the given inputs (e.g. constant series)."""


class TrainingDivergedError(AvFusionError, RuntimeError):
    """Training produced a non-finite loss."""
