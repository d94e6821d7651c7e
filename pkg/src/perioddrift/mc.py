"""Replicate orchestration shared by the Monte Carlo experiments."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import (
    DomainError,
    GridAlignmentError,
    InsufficientHorizonError,
    RegimeError,
    RunFailedError,
    SimulationDivergedError,
)

ABORTABLE = (
    SimulationDivergedError,
    GridAlignmentError,
    InsufficientHorizonError,
    RegimeError,
    DomainError,
    FloatingPointError,
)
MAX_ABORT_FRACTION = 0.01


@dataclass(frozen=True)
class Aborted:
    replicate: int
    reason: str


def _guarded(args):
    fn, job, rep = args
    try:
        return fn(job)
    except ABORTABLE as exc:
        return Aborted(rep, f"{type(exc).__name__}: {exc}")


def run_replicates(fn: Callable, jobs: Sequence, threads: int = 1, label: str = "run"):
    """Apply ``fn`` to every job, in order, optionally on a process pool.

    Returns ``(results, aborted)`` where aborted replicates are dropped from
    ``results``. More than 1% aborted replicates raises RunFailedError.
    """
    tasks = [(fn, job, i) for i, job in enumerate(jobs)]
    if threads > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            out = list(pool.map(_guarded, tasks, chunksize=max(1, len(tasks) // (4 * threads))))
    else:
        out = [_guarded(t) for t in tasks]
    aborted = [r for r in out if isinstance(r, Aborted)]
    if len(aborted) > MAX_ABORT_FRACTION * len(tasks):
        raise RunFailedError(
            f"{label}: {len(aborted)} of {len(tasks)} replicates aborted; first: {aborted[0].reason}"
        )
    return [r for r in out if not isinstance(r, Aborted)], aborted


def mean_se(x):
    x = np.asarray(x, dtype=float)
    if x.size < 2:
        return float(np.mean(x)), math.nan
    return float(np.mean(x)), float(np.std(x, ddof=1) / math.sqrt(x.size))


def var_se(x):
    """Sample variance and a moment-based standard error for it."""
    x = np.asarray(x, dtype=float)
    m = x.size
    v = float(np.var(x, ddof=1))
    c = x - x.mean()
    m4 = float(np.mean(c**4))
    return v, math.sqrt(max(m4 - ((m - 3) / (m - 1)) * v * v, 0.0) / m)


def cov_se(x, y):
    """Sample covariance and the standard error of the mean of centred products."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    p = (x - x.mean()) * (y - y.mean())
    c = float(np.sum(p) / (x.size - 1))
    return c, float(np.std(p, ddof=1) / math.sqrt(x.size))
