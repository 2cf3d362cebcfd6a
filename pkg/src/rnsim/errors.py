"""Exception hierarchy shared across the package.

The CLI maps these onto distinct exit codes, so keep the split between
configuration, data, convergence and domain errors intact.
"""


class RnsimError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(RnsimError):
    """Invalid or inconsistent pipeline configuration."""


class DataError(RnsimError):
    """Malformed or out-of-contract input data."""


class GridDomainError(RnsimError):
    """Query outside the interpolation lattice of a price grid."""


class StaticArbitrageError(DataError):
    """A price grid violates static no-arbitrage constraints.

    ``kind`` is one of ``"butterfly"``, ``"calendar"`` or
    ``"degenerate_butterfly"``; indices locate the offending node.
    """

    def __init__(self, kind, maturity_index, strike_index, magnitude, message):
        super().__init__(message)
        self.kind = kind
        self.maturity_index = maturity_index
        self.strike_index = strike_index
        self.magnitude = magnitude


class RangeError(DataError):
    """A coordinate falls outside calibrated rescaling bounds."""


class ConvergenceError(RnsimError):
    """An iterative solve or a training run failed to converge."""
