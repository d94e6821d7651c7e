"""Periodic signals and the deterministic jump functionals built from them.

A signal is a 1-periodic shape ``S0``; the drift signal of the diffusion is
``S(theta, t) = S0(t / theta)``.  Smooth shapes carry their first two
derivatives.  Piecewise shapes are declared by jump times ``r``, jump heights
``rho`` and a Lipschitz part ``Sc`` and evaluated from

    S0(t) = sum_j rho_j * N_j(t) - Sc(t),   N_j(t) = #{k >= 0 : k + r_j <= t}.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from functools import partial
from typing import Callable, Union

import numpy as np

from .errors import ConfigError, DomainError, UnsupportedOperationError

# relative slack when comparing t / theta against a jump location, so that grid
# points placed at theta * (k + r) land on the right side of the jump
_COUNT_EPS = 1e-12


def _check_theta(theta):
    if not (np.isfinite(theta) and theta > 0):
        raise DomainError(f"theta must be positive, got {theta!r}")


def _scalar_or_array(x, like):
    return float(x) if np.ndim(like) == 0 else x


def _count(u, r):
    """Vectorised N(u) = max(0, floor(u - r) + 1) with a jump-point tolerance."""
    u = np.asarray(u, dtype=float)
    slack = _COUNT_EPS * np.maximum(1.0, np.abs(u))
    return np.maximum(0.0, np.floor(u - r + slack) + 1.0)


@dataclass(frozen=True)
class SmoothSignal:
    """A C^2, 1-periodic shape with vectorised evaluators for S0, S0', S0''."""

    s0: Callable
    s0_prime: Callable
    s0_second: Callable
    bound: float
    name: str = "smooth"

    def __post_init__(self):
        if not self.bound > 0:
            raise ValueError("bound must be positive")

    def value(self, u):
        return self.s0(np.asarray(u, dtype=float))


@dataclass(frozen=True)
class PiecewiseSignal:
    """Piecewise Lipschitz 1-periodic shape with finitely many jumps per period."""

    jump_times: tuple
    jump_heights: tuple
    continuous_part: Callable | None = None
    lipschitz_const: float = 0.0
    name: str = "piecewise"

    def __post_init__(self):
        r = tuple(float(x) for x in self.jump_times)
        rho = tuple(float(x) for x in self.jump_heights)
        object.__setattr__(self, "jump_times", r)
        object.__setattr__(self, "jump_heights", rho)
        if len(r) == 0:
            raise ValueError("a piecewise signal needs at least one jump")
        if len(r) != len(rho):
            raise ValueError("jump_times and jump_heights differ in length")
        if not (0.0 < r[0] and r[-1] <= 1.0 and all(a < b for a, b in zip(r, r[1:]))):
            raise ValueError("jump times must satisfy 0 < r_1 < ... < r_l <= 1")
        if any(x == 0.0 for x in rho):
            raise ValueError("jump heights must be nonzero")
        if self.lipschitz_const < 0:
            raise ValueError("lipschitz_const must be nonnegative")

    @property
    def n_jumps(self):
        return len(self.jump_times)

    def jump_part(self, u):
        u = np.asarray(u, dtype=float)
        out = np.zeros_like(u)
        for r, rho in zip(self.jump_times, self.jump_heights):
            out += rho * _count(u, r)
        return out

    def continuous_value(self, u):
        u = np.asarray(u, dtype=float)
        if self.continuous_part is None:
            return np.zeros_like(u)
        return np.asarray(self.continuous_part(u), dtype=float) + np.zeros_like(u)

    def value(self, u):
        return self.jump_part(u) - self.continuous_value(u)

    def min_gap(self):
        """Smallest distance between consecutive points of {k + r_j}."""
        r = np.asarray(self.jump_times)
        gaps = np.diff(np.append(r, r[0] + 1.0))
        return float(gaps.min())

    def jump_points(self, theta, horizon):
        """Jump locations theta*(k + r_j) <= horizon, sorted, with their heights."""
        _check_theta(theta)
        locs, heights = [], []
        for r, rho in zip(self.jump_times, self.jump_heights):
            kmax = int(math.floor(horizon / theta - r + 1e-12))
            if kmax < 0:
                continue
            k = np.arange(kmax + 1, dtype=float)
            pts = theta * (k + r)
            keep = pts <= horizon
            locs.append(pts[keep])
            heights.append(np.full(keep.sum(), rho))
        if not locs:
            return np.empty(0), np.empty(0)
        locs = np.concatenate(locs)
        heights = np.concatenate(heights)
        order = np.argsort(locs, kind="stable")
        return locs[order], heights[order]


Signal = Union[SmoothSignal, PiecewiseSignal]


def eval_signal(signal: Signal, theta: float, t):
    """S(theta, t) = S0(t / theta); theta-periodic in t."""
    _check_theta(theta)
    u = np.asarray(t, dtype=float) / theta
    return _scalar_or_array(signal.value(u), t)


def eval_theta_derivative(signal: Signal, theta: float, t):
    """d/dtheta S(theta, t) = -(t / theta^2) S0'(t / theta)."""
    if not isinstance(signal, SmoothSignal):
        raise UnsupportedOperationError("theta-derivative needs a smooth signal")
    _check_theta(theta)
    t = np.asarray(t, dtype=float)
    out = -(t / theta**2) * signal.s0_prime(t / theta)
    return _scalar_or_array(out, t)


def eval_theta_second_derivative(signal: SmoothSignal, theta: float, t):
    if not isinstance(signal, SmoothSignal):
        raise UnsupportedOperationError("theta-derivative needs a smooth signal")
    _check_theta(theta)
    t = np.asarray(t, dtype=float)
    u = t / theta
    out = signal.s0_second(u) * t**2 / theta**4 + signal.s0_prime(u) * 2.0 * t / theta**3
    return _scalar_or_array(out, t)


def counting_function(signal: PiecewiseSignal, j: int, t):
    """N_j(t) = #{k >= 0 : k + r_j <= t}, with 1-based jump index j."""
    if not 1 <= j <= signal.n_jumps:
        raise IndexError(f"jump index {j} outside 1..{signal.n_jumps}")
    out = _count(t, signal.jump_times[j - 1]).astype(np.int64)
    return int(out) if np.ndim(t) == 0 else out


@dataclass(frozen=True)
class JumpFunctional:
    """Piecewise-constant function encoding jump mismatch between theta and theta + h/n^2."""

    theta: float
    h: float
    n: float
    signal: PiecewiseSignal

    def __post_init__(self):
        _check_theta(self.theta)
        if not self.n >= 1:
            raise DomainError(f"n must be >= 1, got {self.n!r}")
        if not self.zeta > 0:
            raise DomainError(f"theta + h/n^2 = {self.zeta!r} is not positive")

    @property
    def zeta(self):
        return self.theta + self.h / self.n**2

    def __call__(self, s):
        return eval_jump_functional(self, s)


def jump_difference(signal: PiecewiseSignal, zeta: float, theta: float, s):
    """Jump part of S(zeta, s) - S(theta, s), i.e. sum_j rho_j [N_j(s/zeta) - N_j(s/theta)]."""
    _check_theta(theta)
    _check_theta(zeta)
    s = np.asarray(s, dtype=float)
    if zeta == theta:
        return _scalar_or_array(np.zeros_like(s), s)
    out = np.zeros_like(s)
    for r, rho in zip(signal.jump_times, signal.jump_heights):
        out += rho * (_count(s / zeta, r) - _count(s / theta, r))
    return _scalar_or_array(out, s)


def eval_jump_functional(jf: JumpFunctional, s):
    """j^{h,n}_theta(s); nonnegative counts for either sign of h."""
    s = np.asarray(s, dtype=float)
    if np.any(s < 0):
        raise DomainError("s must be nonnegative")
    if jf.h == 0:
        return _scalar_or_array(np.zeros_like(s), s)
    diff = np.asarray(jump_difference(jf.signal, jf.zeta, jf.theta, s))
    out = diff if jf.h < 0 else -diff
    return _scalar_or_array(out, s)


@dataclass(frozen=True)
class SupportIntervals:
    """Maximal intervals carrying the value rho_j, sorted by left endpoint."""

    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    jump_index: np.ndarray
    overlap: bool

    @property
    def intervals(self):
        return [(float(a), float(b), float(v)) for a, b, v in zip(self.left, self.right, self.value)]

    def __len__(self):
        return len(self.left)


def support_intervals(jf: JumpFunctional, horizon: float) -> SupportIntervals:
    """Intervals between theta*(k+r_j) and (theta+h/n^2)*(k+r_j) that start before ``horizon``.

    On each interval ``[left, right)`` the functional equals rho_j.  ``overlap``
    is set when two intervals intersect, which happens for n below the
    disjointness threshold.
    """
    if jf.h == 0:
        empty = np.empty(0)
        return SupportIntervals(empty, empty, empty, np.empty(0, dtype=int), False)
    lo_scale, hi_scale = min(jf.theta, jf.zeta), max(jf.theta, jf.zeta)
    lefts, rights, values, idx = [], [], [], []
    for j, (r, rho) in enumerate(zip(jf.signal.jump_times, jf.signal.jump_heights)):
        k = np.arange(0, max(0, int(math.ceil(horizon / lo_scale - r))) + 1, dtype=float)
        left = lo_scale * (k + r)
        keep = left < horizon
        lefts.append(left[keep])
        rights.append(hi_scale * (k[keep] + r))
        values.append(np.full(keep.sum(), rho))
        idx.append(np.full(keep.sum(), j + 1, dtype=int))
    left = np.concatenate(lefts)
    right = np.concatenate(rights)
    value = np.concatenate(values)
    jidx = np.concatenate(idx)
    order = np.argsort(left, kind="stable")
    left, right, value, jidx = left[order], right[order], value[order], jidx[order]
    overlap = bool(np.any(left[1:] < right[:-1])) if len(left) > 1 else False
    return SupportIntervals(left, right, value, jidx, overlap)


def disjoint_threshold(signal: PiecewiseSignal, theta: float, d: float, t0: float) -> int:
    """Smallest n with d*(t0*n/theta + 1)/n^2 < theta*gap/2 (gap = min spacing of jump points)."""
    _check_theta(theta)
    if d <= 0:
        return 1
    half_gap = theta * signal.min_gap() / 2.0
    a = d * t0 / theta
    n = int(math.floor((a + math.sqrt(a * a + 4.0 * half_gap * d)) / (2.0 * half_gap))) + 1
    n = max(n, 1)
    while n > 1 and d * (t0 * (n - 1) / theta + 1.0) / (n - 1) ** 2 < half_gap:
        n -= 1
    while not d * (t0 * n / theta + 1.0) / n**2 < half_gap:
        n += 1
    return n


# ---------------------------------------------------------------------------
# catalog


def _sin_value(u, amp):
    return amp * np.sin(2.0 * np.pi * u)


def _sin_prime(u, amp):
    return amp * 2.0 * np.pi * np.cos(2.0 * np.pi * u)


def _sin_second(u, amp):
    return -amp * 4.0 * np.pi**2 * np.sin(2.0 * np.pi * u)


def _zero(u):
    return np.zeros_like(np.asarray(u, dtype=float))


def _bump_x(u, width):
    frac = np.asarray(u, dtype=float) % 1.0
    return (frac - 0.5) / width


def _bump_value(u, amp, width):
    x = _bump_x(u, width)
    return np.where(np.abs(x) < 1.0, amp * (1.0 - x * x) ** 3, 0.0)


def _bump_prime(u, amp, width):
    x = _bump_x(u, width)
    return np.where(np.abs(x) < 1.0, amp * -6.0 * x * (1.0 - x * x) ** 2 / width, 0.0)


def _bump_second(u, amp, width):
    x = _bump_x(u, width)
    inner = -6.0 * (1.0 - x * x) ** 2 + 24.0 * x * x * (1.0 - x * x)
    return np.where(np.abs(x) < 1.0, amp * inner / width**2, 0.0)


def _affine(u, slope, offset):
    return slope * np.asarray(u, dtype=float) + offset


def sine_signal(amplitude=1.0) -> SmoothSignal:
    a = float(amplitude)
    bound = max(abs(a) * 4.0 * np.pi**2, 1e-300)
    return SmoothSignal(
        partial(_sin_value, amp=a), partial(_sin_prime, amp=a), partial(_sin_second, amp=a),
        bound=bound, name="sin" if a == 1.0 else f"sin*{a:g}",
    )


def bump_signal(width=0.25, amplitude=1.0) -> SmoothSignal:
    """C^2 bump (1 - x^2)^3 of half-width ``width`` centred at 1/2 in each period."""
    if not 0 < width <= 0.5:
        raise ValueError("bump width must lie in (0, 1/2]")
    a = float(amplitude)
    # sup|b'| = 6 (1/sqrt5)(4/5)^2 at x^2 = 1/5, sup|b''| = 6 at x = 0
    bound = max(abs(a), abs(a) * 6.0 * 0.64 / math.sqrt(5.0) / width, abs(a) * 6.0 / width**2, 1e-300)
    name = "bump" if (width == 0.25 and a == 1.0) else f"bump({width:g})*{a:g}"
    return SmoothSignal(
        partial(_bump_value, amp=a, width=width), partial(_bump_prime, amp=a, width=width),
        partial(_bump_second, amp=a, width=width), bound=bound, name=name,
    )


def steps_signal(r, rho, c=0.0, amplitude=1.0, name=None) -> PiecewiseSignal:
    """S0(t) = c + sum_j rho_j (N_j(t) - t): periodic jumps with linear pieces in between.

    The Lipschitz part is Sc(t) = (sum rho) t - c; it vanishes when the jumps
    sum to zero, which gives a pure step function.
    """
    a = float(amplitude)
    rho = tuple(a * float(x) for x in rho)
    slope = float(sum(rho))
    offset = -a * float(c)
    cont = None if (slope == 0.0 and offset == 0.0) else partial(_affine, slope=slope, offset=offset)
    if name is None:
        name = "steps(" + ",".join(f"{x:g}" for x in r) + ";" + ",".join(f"{x:g}" for x in rho) + f";{a * c:g})"
    return PiecewiseSignal(tuple(r), rho, cont, abs(slope), name)


def box_signal(r1, r2, amplitude=1.0) -> PiecewiseSignal:
    """Indicator of the window between r1 and r2, continued 1-periodically."""
    if not 0 < r1 < r2 < 1:
        raise ValueError("box needs 0 < r1 < r2 < 1")
    a = float(amplitude)
    name = f"box({r1:g},{r2:g})" if a == 1.0 else f"box({r1:g},{r2:g})*{a:g}"
    return steps_signal((r1, r2), (1.0, -1.0), 0.0, amplitude=a, name=name)


def scaled(signal: Signal, factor: float) -> Signal:
    """The same shape multiplied by ``factor``."""
    f = float(factor)
    if isinstance(signal, SmoothSignal):
        return SmoothSignal(
            partial(_mul, fn=signal.s0, factor=f), partial(_mul, fn=signal.s0_prime, factor=f),
            partial(_mul, fn=signal.s0_second, factor=f), bound=max(abs(f) * signal.bound, 1e-300),
            name=f"{signal.name}*{f:g}",
        )
    cont = None if signal.continuous_part is None else partial(_mul, fn=signal.continuous_part, factor=f)
    rho = tuple(f * x for x in signal.jump_heights)
    if f == 0.0:
        raise ValueError("a piecewise signal cannot be scaled to zero (jump heights must be nonzero)")
    return PiecewiseSignal(signal.jump_times, rho, cont, abs(f) * signal.lipschitz_const, f"{signal.name}*{f:g}")


def _mul(u, fn, factor):
    return factor * np.asarray(fn(u), dtype=float)


def affine_part(signal: PiecewiseSignal):
    """(slope, offset) of the Lipschitz part when it is affine or absent, else None."""
    return _affine_coeffs(signal.continuous_part)


def _affine_coeffs(fn):
    if fn is None:
        return 0.0, 0.0
    if isinstance(fn, partial) and fn.func is _affine:
        return float(fn.keywords["slope"]), float(fn.keywords["offset"])
    if isinstance(fn, partial) and fn.func is _mul:
        inner = _affine_coeffs(fn.keywords["fn"])
        if inner is not None:
            f = fn.keywords["factor"]
            return f * inner[0], f * inner[1]
    return None


_CALL = re.compile(r"^\s*([a-z_]+)\s*(?:\((.*)\))?\s*$")


def _floats(text):
    text = text.strip()
    if not text:
        return []
    return [float(x) for x in text.split(",")]


def make_signal(spec, amplitude=1.0) -> Signal:
    """Build a catalog signal from ``sin``, ``bump``, ``box(r1,r2)`` or ``steps(r;rho;c)``."""
    if isinstance(spec, dict):
        spec = dict(spec)
        sid = spec.pop("id")
        amplitude = spec.pop("amplitude", amplitude)
        return make_signal(sid, amplitude)
    m = _CALL.match(str(spec))
    if not m:
        raise ConfigError(f"cannot parse signal id {spec!r}")
    kind, args = m.group(1), m.group(2) or ""
    try:
        if kind == "sin":
            return sine_signal(amplitude)
        if kind == "bump":
            vals = _floats(args)
            return bump_signal(vals[0] if vals else 0.25, amplitude)
        if kind == "box":
            r1, r2 = _floats(args)
            return box_signal(r1, r2, amplitude)
        if kind == "steps":
            parts = args.split(";")
            if len(parts) not in (2, 3):
                raise ValueError("steps needs 'r;rho' or 'r;rho;c'")
            c = float(parts[2]) if len(parts) == 3 and parts[2].strip() else 0.0
            return steps_signal(_floats(parts[0]), _floats(parts[1]), c, amplitude)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"bad signal {spec!r}: {exc}") from exc
    raise ConfigError(f"unknown signal id {kind!r}")
