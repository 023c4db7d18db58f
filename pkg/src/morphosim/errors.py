"""Exception hierarchy shared by every module.

The CLI maps these onto stable exit statuses, so library code raises the
most specific class that applies.
"""


class MorphosimError(Exception):
    """Base class for all toolkit errors."""


class InvalidArgumentError(MorphosimError, ValueError):
    """An argument is outside its documented domain."""


class DimensionError(MorphosimError, ValueError):
    """Two operands live on different grids."""


class FormatError(MorphosimError, OSError):
    """A file does not follow the supported NIfTI-1 subset."""


class DegenerateInputError(MorphosimError, ValueError):
    """Input carries no usable signal (e.g. a constant volume)."""


class ConfigError(MorphosimError, ValueError):
    """Pipeline configuration failed validation."""
