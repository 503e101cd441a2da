"""Exception types shared across the toolkit."""


class LesionKitError(Exception):
    """Base class for all toolkit errors."""


class InputFormatError(LesionKitError):
    """A file or payload does not conform to its declared format."""


class ConfigError(LesionKitError):
    """A configuration value, shape constraint or invariant is violated."""
