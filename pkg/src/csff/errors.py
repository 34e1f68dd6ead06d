"""Exception types shared across the package."""


class CsffError(Exception):
    """Base class for all package errors."""


class ShapeError(CsffError):
    """Tensor or kernel dimensions do not conform."""


class FormatError(CsffError):
    """A binary or text artifact violates its file format."""


class DataError(CsffError):
    """Labels, splits, or sample counts are unusable."""


class ConfigError(CsffError):
    """An experiment configuration is invalid."""


class StateError(CsffError):
    """An operation was called before its prerequisite state existed."""


class NumericError(CsffError):
    """Training diverged or produced non-finite values."""
