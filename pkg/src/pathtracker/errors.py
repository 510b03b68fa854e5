"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class PathtrackerError(Exception):
    exit_code = 1


class ConfigError(PathtrackerError, ValueError):
    """Invalid generation or sweep configuration."""

    exit_code = 1


class GenerationError(PathtrackerError):
    """Rejection sampling ran out of attempts."""

    exit_code = 3


class TrackingError(PathtrackerError):
    exit_code = 3


class MalformedSampleError(TrackingError):
    """No detection near the start marker in the first frame."""


class DataError(PathtrackerError):
    exit_code = 2


class ChecksumError(DataError):
    pass


class BadMagicError(DataError):
    pass


class TruncatedShardError(DataError):
    pass


class DimensionMismatchError(DataError):
    pass


class PredictionFileError(DataError):
    pass


class MissingIndexError(PredictionFileError):
    pass
