"""Configuration, estimation and experiment orchestration."""

from .config import RunConfig
from .estimate import EstimatorResult, estimate_theta
from .rates import RateReport, rate_experiment
from .run import run

__all__ = ["RunConfig", "EstimatorResult", "estimate_theta", "RateReport", "rate_experiment", "run"]
