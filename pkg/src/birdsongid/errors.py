"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 1, DataError -> 2.
"""


class BirdsongError(Exception):
    """Base class for all package errors."""


class ConfigError(BirdsongError):
    """Invalid configuration or incompatible option combination."""


class DataError(BirdsongError):
    """A data file is missing, malformed, or inconsistent."""


class ManifestError(DataError):
    """Manifest CSV failed to parse or violates its invariants."""


class AudioDecodeError(DataError):
    """A WAV file could not be decoded."""


class CheckpointError(DataError):
    """A checkpoint file is corrupt, truncated, or version-incompatible."""


class TrainingDiverged(BirdsongError):
    """Loss became non-finite during training."""
