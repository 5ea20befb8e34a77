"""Exception hierarchy shared by all lrunet modules."""


class LruNetError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(LruNetError, ValueError):
    """Tensor shapes are inconsistent with the requested operation."""


class ConfigError(LruNetError, ValueError):
    """A network or training configuration violates its constraints."""


class DataError(LruNetError, ValueError):
    """Input data values are invalid (bad labels, incompatible content)."""


class FormatError(LruNetError, ValueError):
    """A file does not conform to its binary format."""


class StateError(LruNetError, RuntimeError):
    """An operation was called in the wrong order (e.g. backward before forward)."""
