"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Tensor extents are incompatible with the requested operation."""


class ConfigError(ValueError):
    """A configuration value violates a documented invariant."""


class UsageError(RuntimeError):
    """An API call broke its contract (bad argument combination or state)."""


class FormatError(ValueError):
    """A file or byte stream does not match its documented layout."""


class NumericError(FloatingPointError):
    """A forward computation produced NaN or Inf values."""


class GraphError(RuntimeError):
    """The autodiff tape is malformed (e.g. a cycle was detected)."""
