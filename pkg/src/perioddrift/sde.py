"""Euler-Maruyama simulation of d xi = [S(theta,t) + b(xi)] dt + sigma(xi) dW.

Noise comes from a Philox counter-based stream keyed by ``(seed, replicate)``,
so every replicate is reproducible on its own and independent of the others.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import partial
from pathlib import Path as FsPath
from typing import Callable, NamedTuple, Sequence

import numba
import numpy as np

from .errors import ConfigError, DomainError, GridAlignmentError, SimulationDivergedError
from .signal import PiecewiseSignal, Signal, eval_signal

_MASK64 = (1 << 64) - 1


# ---------------------------------------------------------------------------
# models


def _linear_drift(x, kappa, mu):
    return -kappa * (np.asarray(x, dtype=float) - mu)


def _sine_vol(x, s0, s1):
    return s0 + s1 * np.sin(np.asarray(x, dtype=float))


@dataclass(frozen=True)
class ModelSpec:
    """Base drift b, diffusion coefficient sigma (both vectorised) and start x0.

    ``kernel`` holds ``(kappa, mu, s0, s1)`` when b(x) = -kappa (x - mu) and
    sigma(x) = s0 + s1 sin(x); such models run through the compiled Euler loop.
    """

    b: Callable
    sigma: Callable
    sigma_lower: float
    sigma_upper: float = math.inf
    lipschitz_b: float = 0.0
    lipschitz_sigma: float = 0.0
    x0: float = 0.0
    model_id: str = "custom"
    kernel: tuple | None = None

    def __post_init__(self):
        if not self.sigma_lower > 0:
            raise ValueError("sigma_lower must be positive")
        if self.sigma_upper < self.sigma_lower:
            raise ValueError("sigma_upper below sigma_lower")

    @property
    def constant_sigma(self):
        return self.kernel is not None and self.kernel[3] == 0.0


def linear_model(kappa=0.0, mu=0.0, sigma0=1.0, sigma1=0.0, x0=0.0, model_id=None) -> ModelSpec:
    """b(x) = -kappa (x - mu), sigma(x) = sigma0 + sigma1 sin(x)."""
    if not sigma0 > abs(sigma1):
        raise ValueError("need sigma0 > |sigma1| so that sigma stays positive")
    if model_id is None:
        model_id = f"linear(kappa={kappa:g},mu={mu:g},sigma0={sigma0:g},sigma1={sigma1:g})"
    return ModelSpec(
        b=partial(_linear_drift, kappa=float(kappa), mu=float(mu)),
        sigma=partial(_sine_vol, s0=float(sigma0), s1=float(sigma1)),
        sigma_lower=sigma0 - abs(sigma1),
        sigma_upper=sigma0 + abs(sigma1),
        lipschitz_b=abs(kappa),
        lipschitz_sigma=abs(sigma1),
        x0=float(x0),
        model_id=model_id,
        kernel=(float(kappa), float(mu), float(sigma0), float(sigma1)),
    )


MODEL_CATALOG = {
    "white": dict(kappa=0.0, sigma0=1.0),
    "ou": dict(kappa=1.0, sigma0=1.0),
    "ou-sinvol": dict(kappa=1.0, sigma0=1.0, sigma1=0.5),
}


def make_model(spec) -> ModelSpec:
    """Catalog lookup: ``white`` (b=0, sigma=1), ``ou`` (b=-x), ``ou-sinvol`` (sigma=(2+sin x)/2).

    A mapping may override ``kappa``, ``mu``, ``sigma0``, ``sigma1`` and ``x0``;
    id ``linear`` starts from the white-noise defaults.
    """
    if isinstance(spec, str):
        spec = {"id": spec}
    spec = dict(spec)
    mid = spec.pop("id", "linear")
    if mid == "linear":
        base = {}
    elif mid in MODEL_CATALOG:
        base = dict(MODEL_CATALOG[mid])
    else:
        raise ConfigError(f"unknown model id {mid!r}")
    unknown = set(spec) - {"kappa", "mu", "sigma0", "sigma1", "x0"}
    if unknown:
        raise ConfigError(f"unknown model keys {sorted(unknown)}")
    base.update(spec)
    name = mid if (mid in MODEL_CATALOG and not spec) else None
    try:
        return linear_model(model_id=name, **base)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


# ---------------------------------------------------------------------------
# grids and paths


@dataclass(frozen=True)
class SimConfig:
    horizon: float
    dt_base: float | None = None
    seed: int = 0
    refine_points: Sequence[float] = ()
    replicate: int = 0
    substream: int = 0

    def __post_init__(self):
        if not self.horizon > 0:
            raise ConfigError("horizon must be positive")
        if self.dt_base is not None and not self.dt_base > 0:
            raise ConfigError("dt_base must be positive")
        pts = np.asarray(self.refine_points, dtype=float)
        if pts.size and (pts.min() < 0 or pts.max() > self.horizon * (1 + 1e-12)):
            raise ConfigError("refine_points must lie in [0, horizon]")


def default_dt(horizon, thetas):
    """horizon * 1e-5, capped at 1e-3 * min(theta)."""
    return min(horizon * 1e-5, 1e-3 * float(np.min(thetas)))


def build_grid(horizon, dt_base, refine_points=()):
    """Uniform grid of mesh <= dt_base merged with the mandatory points."""
    k = max(1, int(math.ceil(horizon / dt_base - 1e-9)))
    uniform = np.linspace(0.0, horizon, k + 1)
    pts = np.asarray(refine_points, dtype=float).ravel()
    pts = pts[(pts > 0) & (pts < horizon)]
    if pts.size == 0:
        return uniform
    pts = np.unique(pts)
    tol = 1e-10 * max(1.0, horizon)
    # drop uniform nodes that nearly coincide with a mandatory point
    pos = np.searchsorted(pts, uniform)
    near = np.zeros(uniform.size, dtype=bool)
    for cand in (pos - 1, pos):
        ok = (cand >= 0) & (cand < pts.size)
        near[ok] |= np.abs(pts[cand[ok]] - uniform[ok]) < tol
    near[0] = near[-1] = False
    merged = np.union1d(uniform[~near], pts)
    keep = np.concatenate(([True], np.diff(merged) > tol))
    merged = merged[keep]
    merged[-1] = horizon
    return merged


def locate(times, points, what="time point"):
    """Indices of ``points`` in the grid ``times``; GridAlignmentError if any is absent."""
    times = np.asarray(times)
    pts = np.atleast_1d(np.asarray(points, dtype=float))
    idx = np.clip(np.searchsorted(times, pts), 0, len(times) - 1)
    left = np.clip(idx - 1, 0, len(times) - 1)
    use_left = np.abs(times[left] - pts) < np.abs(times[idx] - pts)
    idx = np.where(use_left, left, idx)
    tol = 1e-9 * np.maximum(1.0, np.abs(pts))
    bad = np.abs(times[idx] - pts) > tol
    if np.any(bad):
        first = pts[bad][0]
        raise GridAlignmentError(f"{what} {first!r} is not on the path grid")
    return idx


def signal_refine_points(signal: Signal, thetas, horizon):
    """Jump locations of S(theta, .) on [0, horizon] for every theta given."""
    if not isinstance(signal, PiecewiseSignal):
        return np.empty(0)
    out = [signal.jump_points(th, horizon)[0] for th in np.atleast_1d(thetas)]
    return np.concatenate(out) if out else np.empty(0)


def _readonly(a):
    a = np.ascontiguousarray(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Path:
    """A trajectory on a strictly increasing grid starting at t = 0."""

    times: np.ndarray
    values: np.ndarray
    theta_true: float | None = None
    seed: int | None = None
    model_id: str = ""
    signal_id: str = ""
    dt_base: float | None = None
    replicate: int = 0

    def __post_init__(self):
        t = _readonly(self.times)
        x = _readonly(self.values)
        if t.ndim != 1 or t.shape != x.shape:
            raise ValueError("times and values must be 1-d arrays of equal length")
        if len(t) < 2 or t[0] != 0.0 or np.any(np.diff(t) <= 0):
            raise ValueError("times must start at 0 and increase strictly")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", x)

    @property
    def horizon(self):
        return float(self.times[-1])

    @property
    def steps(self):
        return np.diff(self.times)

    def value_at(self, t):
        return self.values[locate(self.times, t)]

    def metadata(self):
        return {
            "theta": self.theta_true,
            "seed": self.seed,
            "replicate": self.replicate,
            "model_id": self.model_id,
            "signal_id": self.signal_id,
            "dt_base": self.dt_base,
        }


def noise_generator(seed, *stream) -> np.random.Generator:
    """Philox generator keyed by the seed and a stream index (replicate, ...)."""
    sub = 0
    for s in stream:
        sub = (sub * 1_000_003 + int(s) + 1) & _MASK64
    return np.random.Generator(np.random.Philox(key=[int(seed) & _MASK64, sub]))


def brownian_increments(times, seed, *stream):
    dt = np.diff(np.asarray(times, dtype=float))
    z = noise_generator(seed, *stream).standard_normal(dt.size)
    return np.sqrt(dt) * z


def bridge_refine(times_coarse, dw_coarse, times_fine, rng: np.random.Generator):
    """Split coarse Brownian increments onto a finer grid by Brownian-bridge sampling.

    Every coarse node must be a fine node; the fine increments sum back to the
    coarse ones exactly (up to rounding).
    """
    tc = np.asarray(times_coarse, dtype=float)
    tf = np.asarray(times_fine, dtype=float)
    node = locate(tf, tc, "coarse node")
    w_coarse = np.concatenate(([0.0], np.cumsum(dw_coarse)))
    w_fine = np.empty(tf.size)
    w_fine[node] = w_coarse
    for a, b in zip(node[:-1], node[1:]):
        if b - a < 2:
            continue
        # sequential conditional sampling of the bridge from t_a to t_b
        for i in range(a + 1, b):
            left_t, right_t = tf[i - 1], tf[b]
            frac = (tf[i] - left_t) / (right_t - left_t)
            mean = w_fine[i - 1] + frac * (w_fine[b] - w_fine[i - 1])
            var = (tf[i] - left_t) * (right_t - tf[i]) / (right_t - left_t)
            w_fine[i] = mean + math.sqrt(var) * rng.standard_normal()
    return np.diff(w_fine)


@numba.njit(cache=True)
def _euler_linear(x0, times, drift_signal, dw, kappa, mu, s0, s1):
    n = times.shape[0]
    x = np.empty(n)
    x[0] = x0
    for i in range(n - 1):
        xi = x[i]
        dt = times[i + 1] - times[i]
        sig = s0 + s1 * math.sin(xi)
        xn = xi + (drift_signal[i] - kappa * (xi - mu)) * dt + sig * dw[i]
        x[i + 1] = xn
        if not math.isfinite(xn):
            return x, i
    return x, -1


def _euler_generic(model, times, drift_signal, dw):
    x = np.empty(times.size)
    x[0] = model.x0
    dt = np.diff(times)
    for i in range(times.size - 1):
        xi = x[i]
        xn = xi + (drift_signal[i] + float(model.b(xi))) * dt[i] + float(model.sigma(xi)) * dw[i]
        x[i + 1] = xn
        if not math.isfinite(xn):
            return x, i
    return x, -1


def euler(model: ModelSpec, signal: Signal, theta, times, dw):
    """Left-point Euler recursion on ``times`` driven by Brownian increments ``dw``."""
    times = np.asarray(times, dtype=float)
    dw = np.asarray(dw, dtype=float)
    drift_signal = np.asarray(eval_signal(signal, theta, times[:-1]), dtype=float)
    if model.kernel is not None:
        x, fail = _euler_linear(model.x0, times, drift_signal, dw, *model.kernel)
    else:
        x, fail = _euler_generic(model, times, drift_signal, dw)
    if fail >= 0:
        raise SimulationDivergedError(times[fail + 1])
    return x


def simulate(model: ModelSpec, signal: Signal, theta, config: SimConfig) -> Path:
    """One Euler-Maruyama path under theta.

    The grid contains the uniform dt_base mesh, ``config.refine_points``, every
    multiple of theta and every jump time theta*(k + r_j) up to the horizon.
    """
    if not theta > 0:
        raise DomainError(f"theta must be positive, got {theta!r}")
    T = float(config.horizon)
    dt_base = config.dt_base if config.dt_base is not None else default_dt(T, [theta])
    multiples = theta * np.arange(0, int(math.floor(T / theta + 1e-12)) + 1)
    mandatory = np.concatenate(
        [np.asarray(config.refine_points, dtype=float), multiples, signal_refine_points(signal, theta, T)]
    )
    times = build_grid(T, dt_base, mandatory)
    dw = brownian_increments(times, config.seed, config.replicate, config.substream)
    x = euler(model, signal, theta, times, dw)
    return Path(
        times, x, theta_true=float(theta), seed=int(config.seed), model_id=model.model_id,
        signal_id=getattr(signal, "name", ""), dt_base=float(dt_base), replicate=int(config.replicate),
    )


def grid_chain(path: Path, theta) -> np.ndarray:
    """(eta_{k theta})_{k = 0..floor(T/theta)}."""
    if not theta > 0:
        raise DomainError("theta must be positive")
    k = np.arange(0, int(math.floor(path.horizon / theta + 1e-12)) + 1)
    return path.values[locate(path.times, theta * k, "grid-chain point")]


class Segment(NamedTuple):
    times: np.ndarray
    values: np.ndarray


def segment_chain(path: Path, theta) -> list[Segment]:
    """Views of the path on [(k-1) theta, k theta] for k = 1..floor(T/theta)."""
    if not theta > 0:
        raise DomainError("theta must be positive")
    k = np.arange(0, int(math.floor(path.horizon / theta + 1e-12)) + 1)
    idx = locate(path.times, theta * k, "segment endpoint")
    return [Segment(path.times[a : b + 1], path.values[a : b + 1]) for a, b in zip(idx[:-1], idx[1:])]


# ---------------------------------------------------------------------------
# serialisation


def _meta_path(csv_path):
    p = FsPath(csv_path)
    return p.with_name(p.stem + ".meta.json")


def write_path(path: Path, csv_path) -> None:
    """CSV with header ``t,x`` plus a ``<stem>.meta.json`` sidecar."""
    csv_path = FsPath(csv_path)
    data = np.column_stack([path.times, path.values])
    np.savetxt(csv_path, data, fmt="%.17g", delimiter=",", header="t,x", comments="")
    _meta_path(csv_path).write_text(json.dumps(path.metadata(), indent=2, sort_keys=True) + "\n")


def read_path(csv_path) -> Path:
    """Read a path written by :func:`write_path`, or any ``t,x`` CSV (sidecar optional)."""
    csv_path = FsPath(csv_path)
    with open(csv_path) as fh:
        header = fh.readline().strip().replace(" ", "")
    if header != "t,x":
        raise ValueError(f"{csv_path}: expected header 't,x', got {header!r}")
    data = np.loadtxt(csv_path, delimiter=",", skiprows=1, ndmin=2)
    meta = {}
    if _meta_path(csv_path).exists():
        meta = json.loads(_meta_path(csv_path).read_text())
    return Path(
        data[:, 0], data[:, 1], theta_true=meta.get("theta"), seed=meta.get("seed"),
        model_id=meta.get("model_id") or "", signal_id=meta.get("signal_id") or "",
        dt_base=meta.get("dt_base"), replicate=meta.get("replicate") or 0,
    )
