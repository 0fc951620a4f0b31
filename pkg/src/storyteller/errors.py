"""Exception hierarchy shared across the package."""


class StorytellerError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(StorytellerError):
    """Dimension mismatch between tensors; the message names both shapes."""


class DataFormatError(StorytellerError):
    """Malformed file contents (bad magic, version, truncation, bad ids)."""


class ConfigError(StorytellerError):
    """Inconsistent or invalid configuration values."""
