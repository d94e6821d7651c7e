"""Discretised Girsanov log-likelihood ratios along an observed path.

All stochastic integrals are left-point Ito sums on the path grid. The
Brownian increments are reconstructed from the path under a reference theta
(innovations), so external data works as well as simulated data.

For piecewise signals the signal is averaged exactly over each grid step:
jump locations that fall strictly inside a step split it, the jump part is
integrated by interval arithmetic and the Lipschitz part by left-point
quadrature on the split step. When every jump location is a grid point this
reduces to plain left-point evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import DomainError, GridAlignmentError, UnsupportedOperationError
from .sde import ModelSpec, Path
from .signal import (
    JumpFunctional,
    PiecewiseSignal,
    Signal,
    SmoothSignal,
    affine_part,
    eval_signal,
    eval_theta_derivative,
    jump_difference,
    support_intervals,
)


def _check_positive(name, value):
    if not (np.isfinite(value) and value > 0):
        raise DomainError(f"{name} must be positive, got {value!r}")


def _merge_tol(times):
    return 1e-10 * max(1.0, float(times[-1]))


def _split_grid(times, breakpoints):
    """Grid refined by the breakpoints strictly inside steps, plus node positions."""
    tol = _merge_tol(times)
    bp = np.asarray(breakpoints, dtype=float)
    bp = bp[(bp > times[0] + tol) & (bp < times[-1] - tol)]
    if bp.size:
        pos = np.searchsorted(times, bp)
        near = (np.abs(times[pos] - bp) < tol) | (np.abs(times[pos - 1] - bp) < tol)
        bp = np.unique(bp[~near])
    if bp.size == 0:
        return times, None
    fine = np.union1d(times, bp)
    return fine, np.searchsorted(fine, times)


def _step_average(values_left, fine, nodes, times):
    """Average over each original step of a function constant on the fine steps."""
    if nodes is None:
        return values_left
    sums = np.add.reduceat(values_left * np.diff(fine), nodes[:-1])
    return sums / np.diff(times)


def _breakpoints(signal, *thetas, horizon):
    if not isinstance(signal, PiecewiseSignal):
        return np.empty(0)
    return np.concatenate([signal.jump_points(th, horizon)[0] for th in thetas])


def signal_step_average(signal: Signal, theta, times):
    """Per-step average of S(theta, .); left-point values for smooth signals."""
    times = np.asarray(times, dtype=float)
    if isinstance(signal, SmoothSignal):
        return np.asarray(eval_signal(signal, theta, times[:-1]), dtype=float)
    fine, nodes = _split_grid(times, _breakpoints(signal, theta, horizon=times[-1]))
    vals = np.asarray(eval_signal(signal, theta, fine[:-1]), dtype=float)
    return _step_average(vals, fine, nodes, times)


def signal_difference_moments(signal: Signal, zeta, theta, times):
    """Per-step averages of D = S(zeta,.) - S(theta,.) and of D^2."""
    times = np.asarray(times, dtype=float)
    if isinstance(signal, SmoothSignal):
        d = np.asarray(eval_signal(signal, zeta, times[:-1]) - eval_signal(signal, theta, times[:-1]), dtype=float)
        return d, d * d
    fine, nodes = _split_grid(times, _breakpoints(signal, zeta, theta, horizon=times[-1]))
    left = fine[:-1]
    d = np.asarray(jump_difference(signal, zeta, theta, left), dtype=float)
    if signal.continuous_part is not None:
        d = d - (signal.continuous_value(left / zeta) - signal.continuous_value(left / theta))
    return _step_average(d, fine, nodes, times), _step_average(d * d, fine, nodes, times)


@dataclass(frozen=True)
class InnovationIncrements:
    """dB_i = (eta_{i+1} - eta_i - [S(theta) + b(eta_i)] dt_i) / sigma(eta_i)."""

    theta: float
    times: np.ndarray
    dt: np.ndarray
    dB: np.ndarray
    sigma: np.ndarray

    def __len__(self):
        return len(self.dB)

    def standardized(self):
        return self.dB / np.sqrt(self.dt)


def innovations(path: Path, model: ModelSpec, signal: Signal, theta) -> InnovationIncrements:
    _check_positive("theta", theta)
    t, x = path.times, path.values
    dt = np.diff(t)
    xl = x[:-1]
    sig = np.broadcast_to(np.asarray(model.sigma(xl), dtype=float), xl.shape)
    drift = signal_step_average(signal, theta, t) + np.asarray(model.b(xl), dtype=float)
    dB = (np.diff(x) - drift * dt) / sig
    return InnovationIncrements(float(theta), t, dt, dB, np.array(sig))


def _upto(innov: InnovationIncrements, t_end):
    if t_end is None:
        return len(innov.dB)
    return int(np.searchsorted(innov.times[:-1], t_end - _merge_tol(innov.times), side="left"))


def log_likelihood_ratio(path: Path, model: ModelSpec, signal: Signal, zeta, theta, t_end=None, innov=None):
    """log L of P^zeta to P^theta at t_end (default: path horizon).

    Sum over steps with t_i < t_end of D_i dB_i / sigma_i - (1/2) D2_i dt_i / sigma_i^2.
    """
    _check_positive("zeta", zeta)
    _check_positive("theta", theta)
    if t_end is not None and t_end > path.horizon * (1 + 1e-12):
        raise DomainError("t_end beyond the path horizon")
    if zeta == theta:
        return 0.0
    if innov is None or innov.theta != theta:
        innov = innovations(path, model, signal, theta)
    k = _upto(innov, t_end)
    d, d2 = signal_difference_moments(signal, zeta, theta, path.times)
    s = innov.sigma[:k]
    return float(np.sum(d[:k] * innov.dB[:k] / s) - 0.5 * np.sum(d2[:k] * innov.dt[:k] / (s * s)))


def score_statistic(path: Path, model: ModelSpec, signal: Signal, theta, n, innov=None):
    """n^{-3/2} sum_{t_i < n} Sdot(theta, t_i) / sigma(eta_{t_i}) dB_i."""
    if isinstance(signal, PiecewiseSignal):
        raise UnsupportedOperationError("the score needs a smooth signal")
    if innov is None or innov.theta != theta:
        innov = innovations(path, model, signal, theta)
    k = _upto(innov, n)
    sdot = np.asarray(eval_theta_derivative(signal, theta, innov.times[:k]), dtype=float)
    return float(np.sum(sdot * innov.dB[:k] / innov.sigma[:k])) / n**1.5


def quadratic_residual(path: Path, model: ModelSpec, signal: Signal, theta, n, h, innov=None, fisher=None, score=None):
    """log L at theta + h n^{-3/2} minus (h * score - h^2 * fisher / 2), all up to time n."""
    from .ergodic import estimate_fisher_info

    zeta = theta + h * n**-1.5
    if not zeta > 0:
        raise DomainError(f"theta + h n^(-3/2) = {zeta!r} is not positive")
    if h == 0:
        return 0.0
    if innov is None or innov.theta != theta:
        innov = innovations(path, model, signal, theta)
    if score is None:
        score = score_statistic(path, model, signal, theta, n, innov=innov)
    if fisher is None:
        fisher = estimate_fisher_info(path, signal, theta, n, model)
    loglik = log_likelihood_ratio(path, model, signal, zeta, theta, t_end=n, innov=innov)
    return loglik - (h * score - 0.5 * h * h * fisher)


def jump_refine_points(signal: PiecewiseSignal, theta, h_values, n, horizon):
    """Endpoints and midpoints of the support intervals of j^{h,n} for every h, inside [0, horizon]."""
    pts = [signal.jump_points(theta, horizon)[0]]
    for h in np.atleast_1d(h_values):
        if h == 0:
            continue
        si = support_intervals(JumpFunctional(theta, float(h), n, signal), horizon)
        pts += [si.left, si.right, 0.5 * (si.left + si.right)]
    out = np.concatenate(pts)
    return np.unique(out[(out >= 0) & (out <= horizon)])


@dataclass(frozen=True)
class JumpDecomposition:
    loglik: float
    jump_linear: float
    jump_quadratic: float

    @property
    def residual(self):
        return self.loglik - (self.jump_linear - 0.5 * self.jump_quadratic)


def jump_decomposition(path: Path, model: ModelSpec, signal: PiecewiseSignal, theta, n, h, t=1.0, innov=None):
    """log L at theta + h/n^2 up to time t*n and its jump-only approximation.

    The approximation keeps only the signed jump part of S(theta + h/n^2) - S(theta):
    sum j_i / sigma_i dB_i and sum j_i^2 / sigma_i^2 dt_i over t_i < t n. Every
    jump location involved must be a grid point.
    """
    if not isinstance(signal, PiecewiseSignal):
        raise UnsupportedOperationError("jump decomposition needs a piecewise signal")
    if not 0 < t <= 1:
        raise DomainError("t must lie in (0, 1]")
    zeta = theta + h / n**2
    if not zeta > 0:
        raise DomainError(f"theta + h/n^2 = {zeta!r} is not positive")
    if h == 0:
        return JumpDecomposition(0.0, 0.0, 0.0)
    t_end = t * n
    needed = _breakpoints(signal, theta, zeta, horizon=min(t_end, path.horizon))
    _, nodes = _split_grid(path.times, needed)
    if nodes is not None:
        raise GridAlignmentError("jump locations of theta + h/n^2 are missing from the grid; refine the path")
    if innov is None or innov.theta != theta:
        innov = innovations(path, model, signal, theta)
    k = _upto(innov, t_end)
    j = np.asarray(jump_difference(signal, zeta, theta, path.times[:k]), dtype=float)
    s = innov.sigma[:k]
    lin = float(np.sum(j * innov.dB[:k] / s))
    quad = float(np.sum(j * j * innov.dt[:k] / (s * s)))
    loglik = log_likelihood_ratio(path, model, signal, zeta, theta, t_end=t_end, innov=innov)
    return JumpDecomposition(loglik, lin, quad)


def jump_decomposition_residual(path, model, signal, theta, n, h, t=1.0, innov=None):
    return jump_decomposition(path, model, signal, theta, n, h, t, innov).residual


@dataclass
class LocalExperiment:
    theta_ref: float
    n: float
    h_values: list
    rate: str
    loglik: list
    score: float | None = None
    fisher: float | None = None
    residuals: list = field(default_factory=list)

    def rows(self):
        return [
            {"h": h, "loglik": ll, "residual": res}
            for h, ll, res in zip(self.h_values, self.loglik, self.residuals)
        ]


def local_experiment(path: Path, model: ModelSpec, signal: Signal, theta, n, h_values) -> LocalExperiment:
    """Terminal log-likelihoods at the local alternatives theta + h * (local scale), up to time n."""
    from .ergodic import estimate_fisher_info

    innov = innovations(path, model, signal, theta)
    h_values = [float(h) for h in h_values]
    if isinstance(signal, SmoothSignal):
        score = score_statistic(path, model, signal, theta, n, innov=innov)
        fisher = estimate_fisher_info(path, signal, theta, n, model)
        loglik, resid = [], []
        for h in h_values:
            ll = log_likelihood_ratio(path, model, signal, theta + h * n**-1.5, theta, t_end=n, innov=innov)
            loglik.append(ll)
            resid.append(0.0 if h == 0 else ll - (h * score - 0.5 * h * h * fisher))
        return LocalExperiment(float(theta), float(n), h_values, "n^-3/2", loglik, score, fisher, resid)
    decs = [jump_decomposition(path, model, signal, theta, n, h, 1.0, innov) for h in h_values]
    return LocalExperiment(
        float(theta), float(n), h_values, "n^-2", [d.loglik for d in decs], None, None, [d.residual for d in decs]
    )


# ---------------------------------------------------------------------------
# contrast: log L(zeta / theta_ref) up to a zeta-free additive term


@numba.njit(cache=True)
def _cumulative_at(table, bucket, width, p):
    """(Y0, W0, W1) at time p; rows of ``table`` are (t, Y0, W0, W1, y density, w density)."""
    last = table.shape[0] - 2
    b = int(p / width)
    if b >= bucket.shape[0]:
        b = bucket.shape[0] - 1
    i = bucket[b]
    while i < last and table[i + 1, 0] <= p:
        i += 1
    ti = table[i, 0]
    d = p - ti
    return (table[i, 1] + table[i, 4] * d, table[i, 2] + table[i, 5] * d,
            table[i, 3] + table[i, 5] * (p * p - ti * ti) * 0.5)


def _bucket_table(t):
    width = t[-1] / (t.size - 1)
    edges = np.arange(t.size) * width
    bucket = np.clip(np.searchsorted(t, edges, side="right") - 1, 0, t.size - 2)
    return bucket.astype(np.int64), float(width)


@numba.njit(cache=True)
def _piecewise_contrast(table, bucket, width, totals, r, rho, alpha, beta, zetas):
    """Contrast of a signal that is piecewise constant plus an affine Lipschitz part.

    ``totals`` holds Y0, Y1, W0, W1, W2 at the horizon. The outer loop runs
    over jump indices (k, j) and the inner one over zeta, so that consecutive
    lookups hit neighbouring rows of ``table``.
    """
    T = table[table.shape[0] - 1, 0]
    Y0T, Y1T, W0T, W1T, W2T = totals[0], totals[1], totals[2], totals[3], totals[4]
    G = zetas.shape[0]
    lin = np.zeros(G)
    quad = np.zeros(G)
    cross = np.zeros(G)
    v = np.zeros(G)
    py0 = np.zeros(G)
    pw0 = np.zeros(G)
    pw1 = np.zeros(G)
    zmin = zetas.min()
    k = 0
    while zmin * (k + r[0]) <= T:
        for j in range(r.shape[0]):
            for g in range(G):
                z = zetas[g]
                p = z * (k + r[j])
                if p > T:
                    continue
                cy0, cw0, cw1 = _cumulative_at(table, bucket, width, p)
                vg = v[g]
                if vg != 0.0:
                    lin[g] += vg * (cy0 - py0[g])
                    quad[g] += vg * vg * (cw0 - pw0[g])
                    cross[g] += vg * ((alpha / z) * (cw1 - pw1[g]) + beta * (cw0 - pw0[g]))
                py0[g] = cy0
                pw0[g] = cw0
                pw1[g] = cw1
                v[g] = vg + rho[j]
        k += 1
    out = np.empty(G)
    for g in range(G):
        a1 = alpha / zetas[g]
        vg = v[g]
        if vg != 0.0:
            lin[g] += vg * (Y0T - py0[g])
            quad[g] += vg * vg * (W0T - pw0[g])
            cross[g] += vg * (a1 * (W1T - pw1[g]) + beta * (W0T - pw0[g]))
        lin_total = lin[g] - a1 * Y1T - beta * Y0T
        quad_total = quad[g] - 2.0 * cross[g] + a1 * a1 * W2T + 2.0 * a1 * beta * W1T + beta * beta * W0T
        out[g] = lin_total - 0.5 * quad_total
    return out


class Contrast:
    """zeta -> int S(zeta) dY - (1/2) int S(zeta)^2 dW with
    dY = (d eta - b dt) / sigma^2 and dW = dt / sigma^2.

    Differences give log-likelihood ratios: contrast(zeta) - contrast(theta)
    equals log L(zeta / theta) whenever S(theta, .) is constant on each grid
    step (smooth signals, or jump locations of theta on the grid). The
    maximiser over zeta therefore does not depend on the reference theta.
    """

    def __init__(self, path: Path, model: ModelSpec, signal: Signal, times=None, y=None, w=None):
        self.signal = signal
        if times is None:
            t, x = path.times, path.values
            xl = x[:-1]
            s = np.broadcast_to(np.asarray(model.sigma(xl), dtype=float), xl.shape)
            inv = 1.0 / (s * s)
            y = (np.diff(x) - np.asarray(model.b(xl), dtype=float) * np.diff(t)) * inv
            w = np.diff(t) * inv
            times = t
        self.times, self.y, self.w = times, np.asarray(y, dtype=float), np.asarray(w, dtype=float)
        self._pw = None
        if isinstance(signal, PiecewiseSignal):
            coeffs = affine_part(signal)
            if coeffs is not None:
                self._pw = self._prepare_piecewise(coeffs)

    def _prepare_piecewise(self, coeffs):
        t, y, w = self.times, self.y, self.w
        dt = np.diff(t)
        mid = 0.5 * (t[:-1] + t[1:])
        sq = (t[:-1] ** 2 + t[:-1] * t[1:] + t[1:] ** 2) / 3.0

        def cum(a):
            return np.concatenate(([0.0], np.cumsum(a)))

        Y0, W0, W1 = cum(y), cum(w), cum(w * mid)
        table = np.zeros((t.size, 6))
        table[:, 0], table[:, 1], table[:, 2], table[:, 3] = t, Y0, W0, W1
        table[:-1, 4], table[:-1, 5] = y / dt, w / dt
        totals = np.array([Y0[-1], float(np.sum(y * mid)), W0[-1], W1[-1], float(np.sum(w * sq))])
        bucket, width = _bucket_table(t)
        sig = self.signal
        return (
            table, bucket, width, totals,
            np.asarray(sig.jump_times, dtype=float), np.asarray(sig.jump_heights, dtype=float),
            float(coeffs[0]), float(coeffs[1]),
        )

    def binned(self, width):
        """Coarser contrast for smooth signals: steps pooled into bins of the given width."""
        if not isinstance(self.signal, SmoothSignal):
            raise UnsupportedOperationError("binning is only used for smooth signals")
        t = self.times
        if width <= np.max(np.diff(t)):
            return self
        edges = np.flatnonzero(np.diff(np.floor(t[:-1] / width), prepend=-1.0) > 0)
        y = np.add.reduceat(self.y, edges)
        w = np.add.reduceat(self.w, edges)
        # each bin is represented by the midpoint of its time span
        right = np.append(t[edges[1:]], t[-1])
        rep = 0.5 * (t[edges] + right)
        out = Contrast.__new__(Contrast)
        out.signal, out._pw = self.signal, None
        out.times, out.y, out.w, out._rep = None, y, w, rep
        return out

    def _left_points(self):
        rep = getattr(self, "_rep", None)
        return rep if rep is not None else self.times[:-1]

    def __call__(self, zetas):
        scalar = np.ndim(zetas) == 0
        z = np.atleast_1d(np.asarray(zetas, dtype=float))
        if np.any(z <= 0):
            raise DomainError("zeta must be positive")
        if self._pw is not None:
            out = _piecewise_contrast(*self._pw, z)
        elif isinstance(self.signal, SmoothSignal):
            out = self._smooth(z)
        else:
            out = self._generic(z)
        return float(out[0]) if scalar else out

    def _smooth(self, z, chunk_elems=4_000_000):
        tl = self._left_points()
        out = np.empty(z.size)
        step = max(1, chunk_elems // max(1, tl.size))
        for a in range(0, z.size, step):
            s = self.signal.s0(tl[None, :] / z[a : a + step, None])
            out[a : a + step] = s @ self.y - 0.5 * (s * s) @ self.w
        return out

    def _generic(self, z):
        t = self.times
        out = np.empty(z.size)
        for g, zeta in enumerate(z):
            a = signal_step_average(self.signal, zeta, t)
            fine, nodes = _split_grid(t, _breakpoints(self.signal, zeta, horizon=t[-1]))
            v = np.asarray(eval_signal(self.signal, zeta, fine[:-1]), dtype=float)
            q = _step_average(v * v, fine, nodes, t)
            out[g] = float(a @ self.y - 0.5 * q @ self.w)
        return out
