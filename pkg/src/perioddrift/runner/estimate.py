"""Maximum-likelihood estimation of the period theta from one path."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from ..errors import DomainError
from ..likelihood import Contrast
from ..sde import ModelSpec, Path
from ..signal import Signal, SmoothSignal

INVPHI = (math.sqrt(5.0) - 1.0) / 2.0
MIN_COARSE = 200
# coarse points per unit of (horizon x frequency range)
COARSE_DENSITY = {"smooth": 8.0, "piecewise": 16.0}
BIN_FRACTION = 0.1
MAX_STAGE_POINTS = 4097


@dataclass(frozen=True)
class EstimatorResult:
    theta_hat: float
    n: float
    replicate: int = 0
    wall_time: float = 0.0
    boundary: bool = False
    search: tuple = ()
    evaluations: int = 0


def default_refine_tol(signal: Signal, n):
    """One order of magnitude below the local scale."""
    return 0.1 * n**-1.5 if isinstance(signal, SmoothSignal) else 0.1 * n**-2.0


def coarse_grid(search, horizon, kind):
    """Increasing zeta grid, uniform in frequency 1/zeta."""
    lo, hi = search
    span = 1.0 / lo - 1.0 / hi
    count = max(MIN_COARSE, int(math.ceil(COARSE_DENSITY[kind] * horizon * span)) + 1)
    return np.sort(1.0 / np.linspace(1.0 / hi, 1.0 / lo, count))


def golden_max(f, a, b, tol):
    """Golden-section search for a maximum of f on [a, b]; returns (x, f(x), evaluations)."""
    c = b - INVPHI * (b - a)
    d = a + INVPHI * (b - a)
    fc, fd = f(c), f(d)
    evals = 2
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - INVPHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + INVPHI * (b - a)
            fd = f(d)
        evals += 1
    return (c, fc, evals) if fc >= fd else (d, fd, evals)


def _argmax_midpoint(values):
    idx = np.flatnonzero(values == values.max())
    return idx[0], idx[-1]


def estimate_theta(path: Path, model: ModelSpec, signal: Signal, search, refine_tol=None, n=None,
                   replicate=0) -> EstimatorResult:
    """Maximise the log-likelihood in zeta over ``search`` = (lo, hi).

    A coarse grid (uniform in 1/zeta, at least 200 points) locates the peak.
    Smooth signals are then refined by golden-section search, piecewise
    signals by repeated uniform zooming, both down to ``refine_tol``. The
    reference parameter only adds a zeta-free constant, so it is not needed.
    """
    start = time.perf_counter()
    lo, hi = float(search[0]), float(search[1])
    if not 0 < lo < hi:
        raise DomainError("search interval must satisfy 0 < lo < hi")
    n = path.horizon if n is None else n
    tol = default_refine_tol(signal, n) if refine_tol is None else float(refine_tol)
    contrast = Contrast(path, model, signal)
    smooth = isinstance(signal, SmoothSignal)
    grid = coarse_grid((lo, hi), path.horizon, "smooth" if smooth else "piecewise")
    coarse = contrast.binned(BIN_FRACTION * lo) if smooth else contrast
    values = coarse(grid)
    evals = grid.size
    i0, i1 = _argmax_midpoint(values)
    i = (i0 + i1) // 2
    if smooth:
        a, b = grid[max(i - 2, 0)], grid[min(i + 2, grid.size - 1)]
        x, fx, k = golden_max(contrast, a, b, tol)
        evals += k
        # keep the coarse winner if refinement did not improve on it on the full data
        fc = contrast(grid[i])
        theta_hat = x if fx >= fc else float(grid[i])
    else:
        a, b = grid[max(i - 3, 0)], grid[min(i + 3, grid.size - 1)]
        while True:
            count = min(MAX_STAGE_POINTS, int(math.ceil((b - a) / tol)) + 1)
            zs = np.linspace(a, b, max(count, 3))
            v = contrast(zs)
            evals += zs.size
            j0, j1 = _argmax_midpoint(v)
            step = zs[1] - zs[0]
            if step <= tol:
                theta_hat = 0.5 * (zs[j0] + zs[j1])
                break
            a, b = zs[max(j0 - 2, 0)], zs[min(j1 + 2, zs.size - 1)]
    coarse_step = max(grid[1] - grid[0], grid[-1] - grid[-2])
    boundary = bool(theta_hat - lo <= coarse_step or hi - theta_hat <= coarse_step)
    return EstimatorResult(float(theta_hat), float(n), int(replicate), time.perf_counter() - start,
                           boundary, (lo, hi), int(evals))
