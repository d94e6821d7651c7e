"""The jump-signal limit experiment (local scale n^{-2}).

Limit log-likelihoods are W(h J) - |h| J / 2 with W a two-sided Brownian motion.
This module samples that field exactly on finite grids, compares prelimit
log-likelihoods against it, checks the interval approximations behind the
constant J, and compares MLE and Bayes risks in the limit model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .ergodic import estimate_J, inv_sigma2
from .errors import DomainError, MarginError, RegimeError, UnsupportedOperationError
from .likelihood import innovations, jump_refine_points, log_likelihood_ratio
from .mc import cov_se, mean_se, run_replicates
from .sde import ModelSpec, Path, SimConfig, default_dt, locate, noise_generator, simulate
from .signal import JumpFunctional, PiecewiseSignal, eval_jump_functional, support_intervals

CALIBRATION_FACTOR = 50
CALIBRATION_DT = 0.005


@dataclass(frozen=True)
class HSet:
    values: tuple

    def __post_init__(self):
        v = tuple(float(x) for x in self.values)
        if not v:
            raise ValueError("an HSet must be nonempty")
        if any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("HSet values must be strictly increasing")
        object.__setattr__(self, "values", v)

    @classmethod
    def of(cls, values):
        return cls(tuple(sorted(set(float(x) for x in values))))

    @property
    def d(self):
        return max(abs(x) for x in self.values)

    def __len__(self):
        return len(self.values)

    def __iter__(self):
        return iter(self.values)


def covariance_matrix(H: HSet) -> np.ndarray:
    """Entry (i, j) is min(|h_i|, |h_j|) for equal signs and 0 otherwise."""
    h = np.asarray(H.values)
    same = np.sign(h)[:, None] * np.sign(h)[None, :] > 0
    return np.where(same, np.minimum(np.abs(h)[:, None], np.abs(h)[None, :]), 0.0)


@dataclass(frozen=True)
class LimitSample:
    h_grid: HSet
    J: float
    w_values: np.ndarray
    loglik: np.ndarray


def _two_sided_bm(points, J, size, rng):
    """W(p J) for each entry of ``points`` (any order), ``size`` independent rows."""
    points = np.asarray(points, dtype=float)
    out = np.zeros((size, points.size))
    for sign in (1.0, -1.0):
        sel = np.flatnonzero(sign * points > 0)
        if sel.size == 0:
            continue
        order = sel[np.argsort(sign * points[sel])]
        gaps = np.diff(np.concatenate(([0.0], sign * points[order]))) * J
        z = rng.standard_normal((size, order.size))
        out[:, order] = np.cumsum(np.sqrt(gaps) * z, axis=1)
    return out


def sample_limit_fields(H: HSet, J, size, seed) -> LimitSample:
    """``size`` independent draws of (W(h_i J))_i and the log-likelihoods W(h_i J) - |h_i| J / 2."""
    if not J > 0:
        raise DomainError("J must be positive")
    rng = noise_generator(seed, 0)
    h = np.asarray(H.values)
    w = _two_sided_bm(h, J, int(size), rng)
    return LimitSample(H, float(J), w, w - 0.5 * np.abs(h) * J)


def sample_limit_field(H: HSet, J, rng_seed) -> LimitSample:
    s = sample_limit_fields(H, J, 1, rng_seed)
    return LimitSample(H, s.J, s.w_values[0], s.loglik[0])


# ---------------------------------------------------------------------------
# deterministic interval checks


def _cumulative_inv_sigma2(path: Path, model):
    """G(t_i) = int_0^{t_i} 1/sigma^2(eta_s) ds with sigma frozen at the left point of each step."""
    g = inv_sigma2(model, path.values[:-1]) * np.diff(path.times)
    return np.concatenate(([0.0], np.cumsum(g)))


def _integrate_inv_sigma2(path, G, a, b):
    """int_a^b 1/sigma^2 for grid-point endpoints a <= b (arrays)."""
    ia = locate(path.times, a, "interval endpoint")
    ib = locate(path.times, b, "interval endpoint")
    return G[ib] - G[ia]


def cross_product_check(path: Path, model: ModelSpec, signal: PiecewiseSignal, theta, n, h1, h2, t=1.0):
    """int_0^{t n} j^{h1,n} j^{h2,n} / sigma^2(eta_s) ds by exact interval arithmetic.

    Every interval endpoint below t n must be a grid point. Overlapping
    intervals (n below the disjointness threshold) raise RegimeError.
    """
    if h1 == 0 or h2 == 0:
        return 0.0
    t_end = t * n
    if t_end > path.horizon * (1 + 1e-12):
        raise DomainError("t n exceeds the path horizon")
    jf1 = JumpFunctional(theta, h1, n, signal)
    jf2 = JumpFunctional(theta, h2, n, signal)
    s1, s2 = support_intervals(jf1, t_end), support_intervals(jf2, t_end)
    if s1.overlap or s2.overlap:
        raise RegimeError("jump intervals overlap; increase n")
    cuts = np.unique(np.concatenate(([0.0, t_end], s1.left, s1.right, s2.left, s2.right)))
    cuts = cuts[cuts <= t_end]
    left, right = cuts[:-1], cuts[1:]
    mid = 0.5 * (left + right)
    prod = np.asarray(eval_jump_functional(jf1, mid)) * np.asarray(eval_jump_functional(jf2, mid))
    live = prod != 0
    if not np.any(live):
        return 0.0
    G = _cumulative_inv_sigma2(path, model)
    return float(np.sum(prod[live] * _integrate_inv_sigma2(path, G, left[live], right[live])))


def interval_sum_check(path: Path, model: ModelSpec, theta, r, h, n, m):
    """(lhs, rhs): the sum over k <= m of int 1/sigma^2 over the interval between
    theta(k+r) and (theta+h/n^2)(k+r), and |h| n^{-2} sum_k k / sigma^2(eta_{theta(k+r)})."""
    if h == 0:
        return 0.0, 0.0
    zeta = theta + h / n**2
    if not zeta > 0:
        raise DomainError("theta + h/n^2 must be positive")
    k = np.arange(m + 1, dtype=float)
    a, b = theta * (k + r), zeta * (k + r)
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    G = _cumulative_inv_sigma2(path, model)
    lhs = float(np.sum(_integrate_inv_sigma2(path, G, lo, hi)))
    s_inv = inv_sigma2(model, path.values[locate(path.times, a, "grid point theta*(k+r)")])
    rhs = abs(h) / n**2 * float(np.sum(k * s_inv))
    return lhs, rhs


# ---------------------------------------------------------------------------
# prelimit versus limit


@dataclass
class FdComparison:
    theta: float
    H: HSet
    n_values: list
    J_hat: float
    J_stderr: float
    replicates: int
    aborted: int
    mean: dict
    mean_stderr: dict
    cov: dict
    cov_stderr: dict
    raw: dict = field(default_factory=dict, repr=False)

    def targets(self):
        h = np.asarray(self.H.values)
        return -0.5 * np.abs(h) * self.J_hat, self.J_hat * covariance_matrix(self.H)

    def mean_reldev(self, n):
        tm, _ = self.targets()
        return np.abs(self.mean[n] - tm) / np.abs(tm)

    def max_mean_reldev(self, n):
        return float(np.max(self.mean_reldev(n)))

    def max_cov_reldev(self, n):
        _, tc = self.targets()
        nz = tc != 0
        return float(np.max(np.abs(self.cov[n][nz] - tc[nz]) / tc[nz]))

    def cross_sign(self, n):
        """(h_i, h_j, covariance, stderr) for every pair with opposite signs."""
        h = self.H.values
        out = []
        for i in range(len(h)):
            for j in range(i + 1, len(h)):
                if h[i] * h[j] < 0:
                    out.append((h[i], h[j], float(self.cov[n][i, j]), float(self.cov_stderr[n][i, j])))
        return out

    def rows(self):
        tm, tc = self.targets()
        h = self.H.values
        out = []
        for n in self.n_values:
            for i, hi in enumerate(h):
                out.append(dict(n=n, h=hi, stat="mean", value=float(self.mean[n][i]), target=float(tm[i]),
                                reldev=float(abs(self.mean[n][i] - tm[i]) / abs(tm[i]))))
            for i, hi in enumerate(h):
                for j in range(i, len(h)):
                    target = float(tc[i, j])
                    value = float(self.cov[n][i, j])
                    rel = abs(value - target) / target if target != 0 else float("nan")
                    out.append(dict(n=n, h=f"{hi:g}|{h[j]:g}", stat="cov", value=value, target=target, reldev=rel))
        return out


def calibrate_J(model: ModelSpec, signal: PiecewiseSignal, theta, horizon, seed, dt=None):
    """estimate_J on one long path (burn-in 10 theta), with its batch-means error."""
    cfg = SimConfig(horizon=float(horizon), dt_base=dt or CALIBRATION_DT * theta, seed=seed,
                    replicate=2**31 - 1)
    path = simulate(model, signal, theta, cfg)
    m = int(math.floor(horizon / theta)) - 1
    return estimate_J(path, signal, theta, m, model, return_stderr=True)


def _fd_replicate(job):
    model, signal, theta, n_values, h_values, seed, rep, dt = job
    out = []
    for i, n in enumerate(n_values):
        refine = jump_refine_points(signal, theta, h_values, n, n)
        cfg = SimConfig(horizon=float(n), dt_base=dt or default_dt(n, [theta]), seed=seed, replicate=rep,
                        substream=i, refine_points=tuple(refine))
        path = simulate(model, signal, theta, cfg)
        innov = innovations(path, model, signal, theta)
        out.append([log_likelihood_ratio(path, model, signal, theta + h / n**2, theta, t_end=n, innov=innov)
                    for h in h_values])
    return out


def fd_convergence_check(model: ModelSpec, signal: PiecewiseSignal, theta, n_values, H: HSet, M, seed,
                         dt=None, threads=1, J_hat=None, calibration_horizon=None) -> FdComparison:
    """Empirical mean vector and covariance of (log L_n at theta + h/n^2)_{h in H} for each n."""
    if not isinstance(signal, PiecewiseSignal):
        raise UnsupportedOperationError("the limit experiment needs a piecewise signal")
    n_values = [float(n) for n in n_values]
    h_values = list(H.values)
    for n in n_values:
        if any(not theta + h / n**2 > 0 for h in h_values):
            raise DomainError("theta + h/n^2 must be positive")
    if J_hat is None:
        T_cal = calibration_horizon or CALIBRATION_FACTOR * max(n_values)
        J_hat, J_se = calibrate_J(model, signal, theta, T_cal, seed)
    else:
        J_se = 0.0
    jobs = [(model, signal, theta, n_values, h_values, seed, rep, dt) for rep in range(M)]
    results, aborted = run_replicates(_fd_replicate, jobs, threads, "limit")
    arr = np.array(results)  # (M, n, h)
    means, mses, covs, cses, raw = {}, {}, {}, {}, {}
    for i, n in enumerate(n_values):
        x = arr[:, i, :]
        raw[n] = x
        means[n] = x.mean(axis=0)
        mses[n] = x.std(axis=0, ddof=1) / math.sqrt(x.shape[0])
        k = len(h_values)
        c, cs = np.zeros((k, k)), np.zeros((k, k))
        for a in range(k):
            for b in range(k):
                c[a, b], cs[a, b] = cov_se(x[:, a], x[:, b])
        covs[n], cses[n] = c, cs
    return FdComparison(float(theta), H, n_values, float(J_hat), float(J_se), len(results), len(aborted),
                        means, mses, covs, cses, raw)


# ---------------------------------------------------------------------------
# estimators in the limit model


@dataclass
class RiskReport:
    J: float
    h_true: float
    M: int
    mle_mse: float
    mle_stderr: float
    bayes_mse: float
    bayes_stderr: float
    mle_mean: float
    mle_mean_stderr: float
    bayes_mean: float
    bayes_mean_stderr: float
    mle: np.ndarray = field(repr=False, default=None)
    bayes: np.ndarray = field(repr=False, default=None)

    @property
    def ratio(self):
        return self.bayes_mse / self.mle_mse

    @property
    def pooled_stderr(self):
        return math.hypot(self.mle_stderr, self.bayes_stderr)

    def rows(self):
        return [
            {"estimator": "mle", "mse": self.mle_mse, "stderr": self.mle_stderr},
            {"estimator": "bayes", "mse": self.bayes_mse, "stderr": self.bayes_stderr},
        ]


def _argmax_midpoint(row):
    idx = np.flatnonzero(row == row.max())
    return 0.5 * (idx[0] + idx[-1])


def mle_vs_bayes(J, h_true=0.0, grid=None, M=2000, seed=0, chunk=250) -> RiskReport:
    """MSE of the grid MLE and of the flat-prior posterior mean for the field
    W((h - h_true) J) - |h - h_true| J / 2.

    ``grid`` is ``(lo, hi, step)``; default ``(h_true - 20/J, h_true + 20/J, 0.005/J)``.
    """
    if not J > 0:
        raise DomainError("J must be positive")
    if grid is None:
        grid = (h_true - 20.0 / J, h_true + 20.0 / J, 0.005 / J)
    lo, hi, step = (float(g) for g in grid)
    if min(h_true - lo, hi - h_true) < 10.0 / J * (1 - 1e-12):
        raise MarginError("grid must extend at least 10/J on each side of h_true")
    if step > 0.01 / J * (1 + 1e-12):
        raise DomainError("grid step must be at most 0.01/J")
    count = int(round((hi - lo) / step)) + 1
    h = lo + step * np.arange(count)
    offsets = h - h_true
    rng = noise_generator(seed, 1)
    mle = np.empty(M)
    bayes = np.empty(M)
    for a in range(0, M, chunk):
        size = min(chunk, M - a)
        ll = _two_sided_bm(offsets, J, size, rng) - 0.5 * np.abs(offsets) * J
        for i in range(size):
            pos = _argmax_midpoint(ll[i])
            if pos == 0 or pos == count - 1:
                raise MarginError(f"argmax on the grid boundary in draw {a + i}; widen the grid")
            mle[a + i] = lo + step * pos
        wts = np.exp(ll - ll.max(axis=1, keepdims=True))
        bayes[a : a + size] = (wts @ h) / wts.sum(axis=1)
    e_mle, e_bay = (mle - h_true) ** 2, (bayes - h_true) ** 2
    m1, s1 = mean_se(e_mle)
    m2, s2 = mean_se(e_bay)
    mm, ms = mean_se(mle - h_true)
    bm, bs = mean_se(bayes - h_true)
    return RiskReport(float(J), float(h_true), int(M), m1, s1, m2, s2, mm, ms, bm, bs, mle, bayes)
