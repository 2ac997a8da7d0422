"""Exception hierarchy shared across the package.

The CLI maps these onto distinct exit codes, so keep the split between
configuration problems (bad parameters, inconsistent rates) and numerical
problems (ill-conditioned inversions, no signal found) intact.
"""


class RcemuError(Exception):
    """Base class for all package errors."""


class ConfigError(RcemuError):
    """Invalid or inconsistent configuration / arguments."""


class NumericalError(RcemuError):
    """A computation could not proceed (ill-conditioned, no signal, ...)."""
