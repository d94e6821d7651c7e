"""Rate-of-convergence experiments for the period estimator."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..mc import run_replicates
from ..sde import SimConfig, default_dt, noise_generator, simulate
from ..signal import PiecewiseSignal
from .config import RunConfig
from .estimate import estimate_theta

BOOTSTRAP_STREAM = 2**32 + 7


def _estimate_replicate(job):
    model, signal, theta, n_values, search, refine_tol, dt, seed, rep = job
    out = []
    for i, n in enumerate(n_values):
        cfg = SimConfig(horizon=float(n), dt_base=dt or default_dt(n, [theta]), seed=seed, replicate=rep,
                        substream=i)
        path = simulate(model, signal, theta, cfg)
        out.append(estimate_theta(path, model, signal, search, refine_tol, n=n, replicate=rep))
    return out


def run_estimates(config: RunConfig):
    """EstimatorResult per replicate and n, as a list over n of lists over replicates."""
    model, signal = config.build_model(), config.build_signal()
    theta = config.theta
    n_values = [float(n) for n in config.get("n_values", [100])]
    search = tuple(config.get("search") or (0.5 * theta, 1.5 * theta))
    jobs = [(model, signal, theta, n_values, search, config.get("refine_tol"), config.dt, int(config.seed), rep)
            for rep in range(config.replicates)]
    results, aborted = run_replicates(_estimate_replicate, jobs, int(config.threads), "estimate")
    per_n = [[r[i] for r in results] for i in range(len(n_values))]
    return n_values, per_n, len(aborted)


def rmse_excluding_boundary(theta_hat, boundary, theta):
    """RMSE after dropping boundary hits; falls back to all replicates if every one hit."""
    theta_hat = np.asarray(theta_hat, dtype=float)
    boundary = np.asarray(boundary, dtype=bool)
    keep = ~boundary if np.any(~boundary) else np.ones_like(boundary)
    return float(np.sqrt(np.mean((theta_hat[keep] - theta) ** 2))), float(boundary.mean()), bool(np.all(boundary))


def loglog_slope(n_values, rmse):
    x = np.log(np.asarray(n_values, dtype=float))
    y = np.log(np.asarray(rmse, dtype=float))
    slope, _ = np.polyfit(x, y, 1)
    return float(slope)


@dataclass
class RateReport:
    theta: float
    signal_id: str
    n_values: list
    rmse: list
    discard_fraction: list
    all_boundary: list
    replicates: int
    aborted: int
    slope: float
    ci: tuple
    target: float
    estimates: list = field(repr=False, default_factory=list)

    def rows(self):
        return [
            {"n": n, "rmse": r, "discard_fraction": d, "all_boundary": int(a)}
            for n, r, d, a in zip(self.n_values, self.rmse, self.discard_fraction, self.all_boundary)
        ]

    def estimate_rows(self):
        return [
            {"n": e.n, "replicate": e.replicate, "theta_hat": e.theta_hat, "boundary": int(e.boundary)}
            for per_n in self.estimates for e in per_n
        ]


def bootstrap_slope(n_values, sq_errors, B, rng):
    """Percentile interval of the slope, resampling squared errors within each n."""
    slopes = np.empty(B)
    for b in range(B):
        rmse = [math.sqrt(np.mean(e[rng.integers(0, e.size, e.size)])) for e in sq_errors]
        slopes[b] = loglog_slope(n_values, rmse) if min(rmse) > 0 else 0.0
    return float(np.percentile(slopes, 2.5)), float(np.percentile(slopes, 97.5))


def rate_experiment(config: RunConfig) -> RateReport:
    """Least-squares slope of log RMSE(theta_hat) on log n with a 1000-resample bootstrap interval."""
    theta = config.theta
    n_values, per_n, aborted = run_estimates(config)
    if len(n_values) < 4:
        raise ValueError("a rate experiment needs at least four values of n")
    rmse, disc, allb, sq = [], [], [], []
    for results in per_n:
        th = np.array([e.theta_hat for e in results])
        bd = np.array([e.boundary for e in results])
        r, d, a = rmse_excluding_boundary(th, bd, theta)
        rmse.append(r)
        disc.append(d)
        allb.append(a)
        keep = ~bd if np.any(~bd) else np.ones_like(bd)
        sq.append((th[keep] - theta) ** 2)
    slope = loglog_slope(n_values, rmse) if min(rmse) > 0 else 0.0
    rng = noise_generator(int(config.seed), BOOTSTRAP_STREAM)
    ci = bootstrap_slope(n_values, sq, int(config.get("bootstrap", 1000)), rng)
    signal = config.build_signal()
    target = -2.0 if isinstance(signal, PiecewiseSignal) else -1.5
    return RateReport(theta, getattr(signal, "name", ""), n_values, rmse, disc, allb,
                      len(per_n[0]), aborted, slope, ci, target, per_n)
