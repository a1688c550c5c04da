"""Exception hierarchy shared across the package.

The CLI maps each subclass to a distinct exit code, so raise the most
specific class that applies.
"""


class CogrlError(Exception):
    """Base class for every error raised by this package."""


class InputError(CogrlError):
    """Malformed or inconsistent input data (files, logs, matrices)."""


class ConfigurationError(CogrlError):
    """Invalid architecture, vocabulary, or run configuration."""


class DimensionError(CogrlError):
    """Array shapes incompatible with a layer or operation."""


class NumericError(CogrlError):
    """Non-finite values encountered during network evaluation."""


class FitError(CogrlError):
    """Likelihood optimization failed to produce a usable iterate."""
