"""Simulation and inference for diffusions whose drift carries a periodic signal of unknown period."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ConfigError,
    DomainError,
    GridAlignmentError,
    InsufficientHorizonError,
    MarginError,
    RegimeError,
    RunFailedError,
    SimulationDivergedError,
    UnsupportedOperationError,
)
from .sde import ModelSpec, Path, SimConfig, make_model, simulate  # noqa: E402
from .signal import PiecewiseSignal, SmoothSignal, box_signal, make_signal, sine_signal  # noqa: E402

__all__ = [
    "ConfigError",
    "DomainError",
    "GridAlignmentError",
    "InsufficientHorizonError",
    "MarginError",
    "RegimeError",
    "RunFailedError",
    "SimulationDivergedError",
    "UnsupportedOperationError",
    "ModelSpec",
    "Path",
    "SimConfig",
    "make_model",
    "simulate",
    "PiecewiseSignal",
    "SmoothSignal",
    "box_signal",
    "make_signal",
    "sine_signal",
]
