"""Exception types shared across the toolkit."""


class DomainError(ValueError):
    """A parameter lies outside its admissible domain (e.g. theta <= 0)."""


class UnsupportedOperationError(TypeError):
    """The operation is not defined for this kind of signal."""


class GridAlignmentError(ValueError):
    """A time point required by a functional is missing from the path grid."""


class InsufficientHorizonError(ValueError):
    """The path is too short for the requested functional."""


class RegimeError(ValueError):
    """Jump intervals overlap: n is below the disjointness threshold."""


class MarginError(ValueError):
    """An argmax landed on the boundary of the search grid."""


class ConfigError(ValueError):
    """Invalid run configuration."""


class SimulationDivergedError(RuntimeError):
    """An Euler step produced a non-finite value."""

    def __init__(self, time, message=None):
        self.time = float(time)
        super().__init__(message or f"simulation diverged at t={self.time:g}")


class RunFailedError(RuntimeError):
    """Too many replicates aborted during a Monte Carlo run."""
