"""Monte Carlo checks of the quadratic expansion for smooth signals (local scale n^{-3/2})."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .ergodic import squared_derivative_weight, time_average_c
from .errors import DomainError, UnsupportedOperationError
from .likelihood import innovations, local_experiment
from .mc import run_replicates, var_se
from .sde import ModelSpec, Path, SimConfig, default_dt, simulate
from .signal import (
    SmoothSignal,
    eval_signal,
    eval_theta_derivative,
)

CALIBRATION_FACTOR = 50
CALIBRATION_DT = 0.005


def _require_smooth(signal):
    if not isinstance(signal, SmoothSignal):
        raise UnsupportedOperationError("this check needs a smooth signal")


@dataclass
class LanReport:
    theta: float
    n_values: list
    h_values: list
    replicates: int
    aborted: int
    score_mean: dict
    score_var: dict
    fisher_estimates: dict
    ks_statistic: dict
    residual_medians: dict
    remainder_U: dict
    remainder_V: dict
    raw: dict = field(default_factory=dict, repr=False)

    def rows(self):
        out = []
        for n in self.n_values:
            for stat, table in (("score_mean", self.score_mean), ("score_var", self.score_var),
                                ("fisher", self.fisher_estimates), ("ks", self.ks_statistic)):
                out.append({"n": n, "h": "", "statistic": stat, "value": table[n]})
            for h in self.h_values:
                for stat, table in (("residual_median_abs", self.residual_medians),
                                    ("remainder_U_median", self.remainder_U),
                                    ("remainder_V_median", self.remainder_V)):
                    out.append({"n": n, "h": h, "statistic": stat, "value": table[(n, h)]})
        return out


def remainder_diagnostics(path: Path, model: ModelSpec, signal: SmoothSignal, theta, n, h, t=1.0):
    """(U, V) at time t for theta_n = theta + h sqrt(3/n^3), by left-point quadrature.

    R(s) = S(theta_n, s) - S(theta, s) - (theta_n - theta) Sdot(theta, s);
    U = int R^2 / sigma^2 ds and V = int R (theta_n - theta) Sdot / sigma^2 ds over [0, t n].
    """
    _require_smooth(signal)
    delta = math.sqrt(3.0 / n**3)
    theta_n = theta + h * delta
    if not theta_n > 0:
        raise DomainError("theta + h sqrt(3/n^3) must be positive")
    if h == 0:
        return 0.0, 0.0
    k = int(np.searchsorted(path.times[:-1], t * n - 1e-10 * max(1.0, n), side="left"))
    s = path.times[:k]
    ds = np.diff(path.times)[:k]
    lin = (theta_n - theta) * np.asarray(eval_theta_derivative(signal, theta, s), dtype=float)
    R = np.asarray(eval_signal(signal, theta_n, s) - eval_signal(signal, theta, s), dtype=float) - lin
    sig = np.broadcast_to(np.asarray(model.sigma(path.values[:k]), dtype=float), s.shape)
    w = ds / (sig * sig)
    return float(np.sum(R * R * w)), float(np.sum(R * lin * w))


def taylor_constant(signal: SmoothSignal, theta, c, n):
    """c(theta, c) with |R(s)| <= c(theta, c) (3/n^3) (1 + s^2) for |h| <= c.

    Uses K = 2 * bound >= max(|2 S0'|, |S0''|) and the pointwise bound
    (K c^2 / 2)(3/n^3)(s^2/(theta - delta c)^4 + s/(theta - delta c)^3).
    """
    lo = theta - math.sqrt(3.0 / n**3) * c
    if not lo > 0:
        raise DomainError("n too small for the Taylor bound")
    K = 2.0 * signal.bound
    return 0.5 * K * c * c * (1.0 / lo**4 + 1.0 / lo**3)


def remainder_pointwise_bound(signal: SmoothSignal, theta, c, n, s):
    lo = theta - math.sqrt(3.0 / n**3) * c
    K = 2.0 * signal.bound
    s = np.asarray(s, dtype=float)
    return 0.5 * K * c * c * (3.0 / n**3) * (s * s / lo**4 + s / lo**3)


def remainder_U_bound(path: Path, model: ModelSpec, signal: SmoothSignal, theta, n, c, t=1.0):
    """c(theta,c)^2 (9/n^6) int_0^{tn} (1+s^2)^2 / sigma^2 ds."""
    k = int(np.searchsorted(path.times[:-1], t * n - 1e-10 * max(1.0, n), side="left"))
    s = path.times[:k]
    sig = np.broadcast_to(np.asarray(model.sigma(path.values[:k]), dtype=float), s.shape)
    integral = float(np.sum((1 + s * s) ** 2 * np.diff(path.times)[:k] / (sig * sig)))
    return taylor_constant(signal, theta, c, n) ** 2 * 9.0 / n**6 * integral


def timechanged_martingale(path: Path, model: ModelSpec, signal: SmoothSignal, theta, n, t_values, innov=None):
    """M^n_t = sqrt(3/n^3) sum_{t_i < t n} Sdot(theta, t_i) / sigma_i dB_i for each t."""
    _require_smooth(signal)
    if innov is None:
        innov = innovations(path, model, signal, theta)
    sdot = np.asarray(eval_theta_derivative(signal, theta, innov.times[:-1]), dtype=float)
    cum = np.concatenate(([0.0], np.cumsum(sdot * innov.dB / innov.sigma)))
    tol = 1e-10 * max(1.0, n)
    idx = np.searchsorted(innov.times[:-1], np.asarray(t_values, dtype=float) * n - tol, side="left")
    return math.sqrt(3.0 / n**3) * cum[idx]


def _lan_replicate(job):
    model, signal, theta, n_values, h_values, seed, rep, dt = job
    out = []
    for i, n in enumerate(n_values):
        cfg = SimConfig(horizon=float(n), dt_base=dt or default_dt(n, [theta]), seed=seed, replicate=rep, substream=i)
        path = simulate(model, signal, theta, cfg)
        le = local_experiment(path, model, signal, theta, n, h_values)
        uv = [remainder_diagnostics(path, model, signal, theta, n, h / math.sqrt(3.0)) for h in h_values]
        out.append((le.score, le.fisher, le.loglik, le.residuals, uv))
    return out


def _check_local(theta, n_values, h_values, scale):
    for n in n_values:
        for h in h_values:
            if not theta + h * n**-scale > 0:
                raise DomainError(f"theta + h n^(-{scale}) <= 0 for n={n}, h={h}")


def run_lan_experiment(model: ModelSpec, signal: SmoothSignal, theta, n_values, h_values, M, seed,
                       dt=None, threads=1) -> LanReport:
    """Score, Fisher information, KS statistic and remainder medians over M replicates per n.

    Replicate i and the j-th entry of n_values use the noise stream (seed, i, j).
    """
    _require_smooth(signal)
    if M < 50:
        raise ValueError("need at least 50 replicates")
    n_values = [float(n) for n in n_values]
    h_values = [float(h) for h in h_values]
    _check_local(theta, n_values, h_values, 1.5)
    jobs = [(model, signal, theta, n_values, h_values, seed, rep, dt) for rep in range(M)]
    results, aborted = run_replicates(_lan_replicate, jobs, threads, "lan")
    rep = dict(score_mean={}, score_var={}, fisher_estimates={}, ks_statistic={},
               residual_medians={}, remainder_U={}, remainder_V={})
    raw = {}
    for i, n in enumerate(n_values):
        score = np.array([r[i][0] for r in results])
        fisher = np.array([r[i][1] for r in results])
        loglik = np.array([r[i][2] for r in results])
        resid = np.array([r[i][3] for r in results])
        uv = np.array([r[i][4] for r in results])
        rep["score_mean"][n] = float(score.mean())
        rep["score_var"][n] = float(score.var(ddof=1))
        ibar = float(fisher.mean())
        rep["fisher_estimates"][n] = ibar
        rep["ks_statistic"][n] = float(stats.kstest(score / math.sqrt(ibar), "norm").statistic) if ibar > 0 else math.nan
        for j, h in enumerate(h_values):
            rep["residual_medians"][(n, h)] = float(np.median(np.abs(resid[:, j])))
            rep["remainder_U"][(n, h)] = float(np.median(uv[:, j, 0]))
            rep["remainder_V"][(n, h)] = float(np.median(uv[:, j, 1]))
        raw[n] = dict(score=score, fisher=fisher, loglik=loglik, residual=resid, U=uv[..., 0], V=uv[..., 1])
    return LanReport(float(theta), n_values, h_values, len(results), len(aborted), raw=raw, **rep)


def calibrate_C(model: ModelSpec, signal, theta, f, horizon, seed, dt=None, burn_in=None):
    """C(theta, f) from one long path (burn-in 10 theta by default), with its batch-means error."""
    cfg = SimConfig(horizon=float(horizon), dt_base=dt or CALIBRATION_DT * theta, seed=seed,
                    replicate=2**31 - 1)
    path = simulate(model, signal, theta, cfg)
    b = 10.0 * theta if burn_in is None else burn_in
    return time_average_c(path, theta, f, model, burn_in=b, return_stderr=True)


@dataclass
class TimeChangeTable:
    n: float
    t_values: list
    variance: list
    stderr: list
    phi: list
    C_hat: float
    C_stderr: float
    replicates: int

    def rows(self):
        return [
            {"t": t, "variance": v, "stderr": s, "phi": p}
            for t, v, s, p in zip(self.t_values, self.variance, self.stderr, self.phi)
        ]


def _tc_replicate(job):
    model, signal, theta, n, t_values, seed, rep, dt = job
    cfg = SimConfig(horizon=float(n), dt_base=dt or default_dt(n, [theta]), seed=seed, replicate=rep,
                    refine_points=tuple(np.asarray(t_values) * n))
    path = simulate(model, signal, theta, cfg)
    return timechanged_martingale(path, model, signal, theta, n, t_values)


def martingale_timechange_check(model: ModelSpec, signal: SmoothSignal, theta, n, t_grid, M, seed,
                                dt=None, threads=1, calibration_horizon=None) -> TimeChangeTable:
    """Var(M^n_t) across replicates next to Phi(t) = t^3 C(theta, [S0']^2) / theta^4."""
    _require_smooth(signal)
    t_values = [float(t) for t in t_grid]
    if any(not 0 < t <= 1 for t in t_values):
        raise DomainError("t_grid must lie in (0, 1]")
    jobs = [(model, signal, theta, float(n), t_values, seed, rep, dt) for rep in range(M)]
    results, _ = run_replicates(_tc_replicate, jobs, threads, "timechange")
    mart = np.array(results)
    T_cal = calibration_horizon or CALIBRATION_FACTOR * n
    C_hat, C_se = calibrate_C(model, signal, theta, squared_derivative_weight(signal), T_cal, seed)
    var, se = zip(*(var_se(mart[:, j]) for j in range(len(t_values))))
    phi = [t**3 * C_hat / theta**4 for t in t_values]
    return TimeChangeTable(float(n), t_values, list(var), list(se), phi, C_hat, C_se, len(results))
