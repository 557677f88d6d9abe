"""Exception hierarchy.

``ConfigError`` maps to CLI exit code 2, every ``NumericalError`` to 3.
"""


class GmsfemError(Exception):
    """Base class for all package errors."""


class ConfigError(GmsfemError, ValueError):
    """Invalid experiment configuration or input data."""


class NumericalError(GmsfemError, RuntimeError):
    """A solve or decomposition could not be completed reliably."""


class SolverError(NumericalError):
    """Linear solve failed or is singular."""


class EigenSolverError(NumericalError):
    """Generalized eigenproblem could not be reduced to standard form."""

    def __init__(self, message: str, region=None):
        if region is not None:
            message = f"{message} (region {region})"
        super().__init__(message)
        self.region = region


class RankDeficientError(SolverError):
    """Coarse system is singular; ``regions`` lists the offending supports."""

    def __init__(self, message: str, regions=()):
        self.regions = list(regions)
        if self.regions:
            message = f"{message}; offending: {self.regions}"
        super().__init__(message)


class IncompatibleDataError(ConfigError):
    """Source and boundary flux violate the compatibility condition."""
