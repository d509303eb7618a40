"""Exception types shared across the package."""


class StarNetError(Exception):
    """Base class for all package errors."""


class ConfigError(StarNetError):
    """A configuration value is invalid or inconsistent."""


class ShapeError(StarNetError):
    """A tensor has an incompatible shape."""


class ParamError(StarNetError):
    """A function argument is out of its valid range."""


class DataError(StarNetError):
    """A dataset root is malformed or a pair cannot be loaded."""


class TrainingError(StarNetError):
    """Training diverged or cannot proceed."""


class CheckpointError(StarNetError):
    """A checkpoint file is missing, corrupt, or incompatible."""
