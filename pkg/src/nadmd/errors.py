"""Exception hierarchy.

Numerical failures derive from :class:`NumericalError` so the CLI can map
them to a single exit code; input problems derive from :class:`ValueError`.
"""


class NumericalError(ArithmeticError):
    """Base class for failures of the numerical pipeline."""


class ParameterizationError(ValueError):
    """A signal could not be sampled to a finite value."""


class SignalRangeError(ValueError):
    """Local time outside ``[0, dt]``."""


class HorizonError(ValueError):
    """Time horizon is not an integral multiple of the step length."""


class DivergenceError(NumericalError):
    """A non-finite state appeared while integrating or predicting.

    Attributes
    ----------
    substep : int or None
        Index of the RK4 substep that produced the non-finite state.
    index : tuple
        Additional location info, e.g. ``(m, j)`` for grid point and snapshot.
    """

    def __init__(self, message, substep=None, index=()):
        super().__init__(message)
        self.substep = substep
        self.index = tuple(index)


class RankDeficiencyError(NumericalError):
    """Snapshot matrix is numerically rank deficient at the requested rank."""

    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point


class RankInfeasibleError(ValueError):
    """A fixed truncation rank exceeds what some grid point supports."""

    def __init__(self, message, points=()):
        super().__init__(message)
        self.points = list(points)


class TrainingError(NumericalError):
    """Aggregated per-point failures raised by :func:`nadmd.dmd.train`."""

    def __init__(self, message, failures=()):
        super().__init__(message)
        self.failures = list(failures)


class NeighborhoodError(NumericalError):
    """Two subspaces are too far apart for the Grassmann logarithm."""


class BranchError(NumericalError):
    """Matrix has no real principal logarithm (spectrum on the branch cut)."""


class ReferenceOperatorError(NumericalError):
    """Reference operator of the aligned store is singular."""


class ExtrapolationError(ValueError):
    """Interpolation target lies outside the grid's bounding box."""

    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point


class StoreFormatError(ValueError):
    """On-disk artifact has an unsupported version or a malformed layout."""


class ChecksumError(StoreFormatError):
    """On-disk file content does not match the recorded checksum."""


class ConfigError(ValueError):
    """Experiment configuration failed validation."""
