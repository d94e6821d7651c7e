"""Time averages along a path: C(theta, f), weighted variants, grid averages,
Fisher information and the jump constant J.

Every function evaluates sigma through a :class:`~perioddrift.sde.ModelSpec`
(or a bare vectorised callable). Standard errors, when requested, come from
20 non-overlapping batch means, using a ratio estimator whenever the terms
carry unequal weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import partial
from typing import Callable

import numpy as np

from .errors import InsufficientHorizonError, UnsupportedOperationError
from .sde import ModelSpec, Path, locate
from .signal import PiecewiseSignal, Signal, SmoothSignal, eval_theta_derivative

N_BATCHES = 20
BURN_IN_PERIODS = 10


@dataclass(frozen=True)
class PeriodicWeight:
    f: Callable
    bound: float

    def __call__(self, v):
        return self.f(v)


@dataclass(frozen=True)
class RegularWeight:
    """Nondecreasing weight H with regular-variation index ``index``.

    ``antiderivative`` (optional) gives exact integrals of H over grid steps.
    """

    H: Callable
    index: float
    antiderivative: Callable | None = None

    def __call__(self, t):
        return self.H(t)


def _const(v, c):
    return np.full(np.shape(v), c, dtype=float)


def _power(t, p):
    return np.asarray(t, dtype=float) ** p


def _power_integral(t, p):
    return np.asarray(t, dtype=float) ** (p + 1) / (p + 1)


def _bump(v, center, width, height):
    x = (np.mod(np.asarray(v, dtype=float) - center + 0.5, 1.0) - 0.5) / width
    return np.where(np.abs(x) < 1, height * (1 - x * x) ** 3, 0.0)


def constant_weight(c=1.0) -> PeriodicWeight:
    return PeriodicWeight(partial(_const, c=float(c)), bound=abs(float(c)) or 1.0)


def power_weight(p) -> RegularWeight:
    """H(t) = t^p with its exact antiderivative."""
    p = float(p)
    return RegularWeight(partial(_power, p=p), index=p, antiderivative=partial(_power_integral, p=p))


def smoothed_indicator(center, width) -> PeriodicWeight:
    """Periodic (1-x^2)^3 bump of half-width ``width`` around ``center`` with unit integral over a period."""
    height = 35.0 / (32.0 * width)  # int_{-1}^{1} (1-x^2)^3 dx = 32/35
    return PeriodicWeight(partial(_bump, center=float(center), width=float(width), height=height), bound=height)


def squared_derivative_weight(signal: SmoothSignal) -> PeriodicWeight:
    """f = [S0']^2."""
    return PeriodicWeight(partial(_squared, fn=signal.s0_prime), bound=signal.bound**2)


def _squared(v, fn):
    return np.asarray(fn(v), dtype=float) ** 2


def _sigma_fn(model):
    return model.sigma if isinstance(model, ModelSpec) else model


def inv_sigma2(model, x):
    s = np.asarray(_sigma_fn(model)(x), dtype=float)
    return np.broadcast_to(1.0 / (s * s), np.shape(x))


def _batch_ratio(values, weights, nbatch=N_BATCHES):
    """Weighted mean and its batch-means standard error."""
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    est = float(np.dot(values, weights) / weights.sum())
    if values.size < 2 * nbatch:
        return est, math.nan
    edges = np.linspace(0, values.size, nbatch + 1).astype(int)
    c = np.add.reduceat(values * weights, edges[:-1])
    w = np.add.reduceat(weights, edges[:-1])
    resid = c - w * est
    se = math.sqrt(nbatch / (nbatch - 1) * np.sum(resid**2)) / w.sum()
    return est, se


def _steps_between(path: Path, start, end):
    """Left points and step lengths of the grid restricted to [start, end]."""
    t = path.times
    i0 = int(np.searchsorted(t, start, side="right")) - 1
    i0 = max(i0, 0)
    i1 = min(int(np.searchsorted(t, end, side="left")), len(t) - 1)
    left = t[i0:i1].copy()
    right = t[i0 + 1 : i1 + 1].copy()
    left[0] = max(left[0], start)
    right[-1] = min(right[-1], end)
    return slice(i0, i1), left, right


def _require_horizon(path: Path, need, what):
    if path.horizon < need * (1 - 1e-12):
        raise InsufficientHorizonError(f"{what}: need horizon >= {need:g}, path has {path.horizon:g}")


def time_average_c(path: Path, theta, f, model, burn_in=0.0, return_stderr=False):
    """(1/T) int_0^T f(s/theta) / sigma^2(eta_s) ds by left-point quadrature.

    With ``burn_in`` > 0 the average runs over [burn_in, T] instead.
    """
    _require_horizon(path, theta, "time_average_c")
    T = path.horizon
    burn_in = min(float(burn_in), T / 2)
    sl, left, right = _steps_between(path, burn_in, T)
    g = np.asarray(f(path.times[sl] / theta), dtype=float) * inv_sigma2(model, path.values[sl])
    est, se = _batch_ratio(g, right - left)
    return (est, se) if return_stderr else est


def weighted_time_average(path: Path, theta, f, H: RegularWeight, model, return_stderr=False):
    """(1 + rho) / (T H(T)) int_0^T H(s) f(s/theta) / sigma^2(eta_s) ds.

    H is integrated exactly over each step when an antiderivative is known
    (product quadrature); otherwise H is taken at the left point.
    """
    _require_horizon(path, theta, "weighted_time_average")
    T = path.horizon
    t = path.times
    if H.antiderivative is not None:
        F = np.asarray(H.antiderivative(t), dtype=float)
        w = np.diff(F)
    else:
        w = np.asarray(H(t[:-1]), dtype=float) * np.diff(t)
    g = np.asarray(f(t[:-1] / theta), dtype=float) * inv_sigma2(model, path.values[:-1])
    norm = (1.0 + H.index) / (T * float(H(T)))
    est = norm * float(np.dot(w, g))
    if not return_stderr:
        return est
    _, se = _batch_ratio(g, w)
    return est, se * norm * float(w.sum())


def _default_burn_k(theta, r, m, burn_in):
    if burn_in is None:
        burn_in = BURN_IN_PERIODS * theta
    k0 = max(0, int(math.ceil(burn_in / theta - r - 1e-12)))
    return min(k0, m // 2)


def _grid_values(path: Path, theta, r, k):
    _require_horizon(path, theta * (k[-1] + r), "grid average")
    idx = locate(path.times, theta * (k + r), "grid point theta*(k+r)")
    return path.values[idx]


def grid_point_average(path: Path, theta, r, m, model, burn_in=None, return_stderr=False):
    """Mean of 1/sigma^2(eta_{theta(k+r)}) over k = k0..m.

    k0 skips the first ``burn_in`` time units (default 10 theta), but never
    more than half of the points.
    """
    k = np.arange(_default_burn_k(theta, r, m, burn_in), m + 1, dtype=float)
    g = inv_sigma2(model, _grid_values(path, theta, r, k))
    est, se = _batch_ratio(g, np.ones_like(g))
    return (est, se) if return_stderr else est


def weighted_grid_average(path: Path, theta, r, m, H: RegularWeight, model, return_stderr=False):
    """(1 + rho) / (m H(m)) sum_{k=0}^m H(k) / sigma^2(eta_{theta(k+r)})."""
    k = np.arange(0, m + 1, dtype=float)
    g = inv_sigma2(model, _grid_values(path, theta, r, k))
    w = np.asarray(H(k), dtype=float)
    norm = (1.0 + H.index) / (m * float(H(m)))
    est = norm * float(np.dot(w, g))
    if not return_stderr:
        return est
    _, se = _batch_ratio(g, w)
    return est, se * norm * float(w.sum())


def estimate_fisher_info(path: Path, signal: Signal, theta, n, model):
    """(1/n^3) int_0^n Sdot(theta, s)^2 / sigma^2(eta_s) ds, left-point quadrature."""
    if isinstance(signal, PiecewiseSignal):
        raise UnsupportedOperationError("Fisher information needs a smooth signal")
    _require_horizon(path, n, "estimate_fisher_info")
    sl, left, right = _steps_between(path, 0.0, n)
    sdot = np.asarray(eval_theta_derivative(signal, theta, path.times[sl]), dtype=float)
    return float(np.sum(sdot * sdot * inv_sigma2(model, path.values[sl]) * (right - left))) / n**3


def estimate_J(path: Path, signal: PiecewiseSignal, theta, m, model, burn_in=None, return_stderr=False):
    """(1 / (2 theta^2)) sum_j rho_j^2 * grid_point_average(theta, r_j, m)."""
    if not isinstance(signal, PiecewiseSignal):
        raise UnsupportedOperationError("J is defined for piecewise signals")
    total, var = 0.0, 0.0
    for r, rho in zip(signal.jump_times, signal.jump_heights):
        avg, se = grid_point_average(path, theta, r, m, model, burn_in=burn_in, return_stderr=True)
        total += rho * rho * avg
        var += (rho * rho * se) ** 2  # treats the per-jump averages as independent
    scale = 1.0 / (2.0 * theta * theta)
    if return_stderr:
        return scale * total, scale * math.sqrt(var)
    return scale * total


def closed_form_J(signal: PiecewiseSignal, theta, inv_sigma2_mean=1.0):
    """J when [mu P](1/sigma^2) is the same known constant for every jump time."""
    return inv_sigma2_mean * float(np.sum(np.square(signal.jump_heights))) / (2.0 * theta * theta)
