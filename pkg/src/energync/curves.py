"""Piecewise-linear functions on [0, inf) and the network-calculus operators.

Every curve, bounding function and distribution function in the package is a
:class:`PiecewiseFn`: breakpoints joined by straight segments, continued past
the last breakpoint with a fixed terminal slope.  The convolution-type
operators work on a uniform grid: both operands are sampled at ``k * step``
and the result is tabulated at the same points, which makes every result
reproducible by a direct double loop over the grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ClassViolation, DivergentDeconvolution, UnboundedDistance

DEFAULT_STEP = 1e-3
DEFAULT_HORIZON = 20.0

_REL_TOL = 1e-9


@dataclass(frozen=True)
class Grid:
    """Uniform grid ``0, step, 2*step, ...`` up to ``horizon`` (inclusive)."""

    step: float = DEFAULT_STEP
    horizon: float = DEFAULT_HORIZON

    def __post_init__(self):
        if not (self.step > 0 and math.isfinite(self.step)):
            raise ValueError(f"grid step must be positive and finite, got {self.step}")
        if not (self.horizon >= 0 and math.isfinite(self.horizon)):
            raise ValueError(f"grid horizon must be non-negative, got {self.horizon}")

    @property
    def size(self) -> int:
        return int(math.floor(self.horizon / self.step + 1e-9)) + 1

    def points(self, size: int | None = None) -> np.ndarray:
        return np.arange(self.size if size is None else size) * self.step


def _tol(values: np.ndarray) -> float:
    scale = float(np.max(np.abs(values))) if values.size else 0.0
    return _REL_TOL * max(1.0, scale)


@dataclass(frozen=True, eq=False)
class PiecewiseFn:
    """Piecewise-linear function on ``[0, inf)``.

    :param t: strictly increasing breakpoint times, ``t[0] == 0``
    :param v: values at the breakpoints
    :param terminal_slope: slope used beyond ``t[-1]``
    :param grid_step: resolution the function was built at (metadata)
    """

    t: np.ndarray
    v: np.ndarray
    terminal_slope: float = 0.0
    grid_step: float = DEFAULT_STEP

    def __post_init__(self):
        t = np.array(self.t, dtype=float).reshape(-1)
        v = np.array(self.v, dtype=float).reshape(-1)
        if t.size == 0 or t.size != v.size:
            raise ValueError("breakpoint times and values must be non-empty and of equal length")
        if t[0] != 0.0:
            raise ValueError(f"first breakpoint must be at t=0, got {t[0]}")
        if t.size > 1 and not np.all(np.diff(t) > 0):
            raise ValueError("breakpoint times must be strictly increasing")
        if not np.all(np.isfinite(v)):
            raise ValueError("breakpoint values must be finite")
        if not (self.grid_step > 0):
            raise ValueError("grid_step must be positive")
        t.flags.writeable = False
        v.flags.writeable = False
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "terminal_slope", float(self.terminal_slope))
        object.__setattr__(self, "grid_step", float(self.grid_step))
        self._validate()

    def _validate(self) -> None:
        pass

    # -- construction -----------------------------------------------------

    @classmethod
    def from_points(
        cls,
        points: Iterable[tuple[float, float]],
        terminal_slope: float = 0.0,
        grid_step: float = DEFAULT_STEP,
    ):
        pts = list(points)
        return cls([p[0] for p in pts], [p[1] for p in pts], terminal_slope, grid_step)

    @classmethod
    def sample(cls, func: Callable[[np.ndarray], np.ndarray], grid: Grid, terminal_slope: float = 0.0):
        """Tabulate a vectorised ``func`` on ``grid``."""
        ts = grid.points()
        return cls(ts, np.broadcast_to(func(ts), ts.shape), terminal_slope, grid.step)

    @classmethod
    def of(cls, fn: "PiecewiseFn"):
        """Re-type ``fn`` as ``cls``, running that class's invariant checks."""
        if type(fn) is cls:
            return fn
        return cls(fn.t, fn.v, fn.terminal_slope, fn.grid_step)

    # -- inspection -------------------------------------------------------

    @property
    def breakpoints(self) -> list[tuple[float, float]]:
        return list(zip(self.t.tolist(), self.v.tolist()))

    @property
    def horizon(self) -> float:
        return float(self.t[-1])

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if np.any(x < 0):
            raise ValueError("piecewise functions are defined on t >= 0 only")
        y = np.interp(x, self.t, self.v)
        beyond = x > self.t[-1]
        if np.any(beyond):
            if not math.isfinite(self.terminal_slope):
                raise ValueError("cannot evaluate beyond the last breakpoint with an infinite slope")
            y = np.where(beyond, self.v[-1] + self.terminal_slope * (x - self.t[-1]), y)
        return float(y) if y.ndim == 0 else y

    def resample(self, grid: Grid) -> "PiecewiseFn":
        ts = grid.points()
        return type(self)(ts, self(ts), self.terminal_slope, grid.step)

    def __repr__(self) -> str:
        return (
            f"{type(self).__name__}(n={self.t.size}, horizon={self.horizon:g}, "
            f"v0={self.v[0]:g}, slope={self.terminal_slope:g})"
        )

    # -- arithmetic (results are plain PiecewiseFn) ------------------------

    def __add__(self, other):
        if isinstance(other, PiecewiseFn):
            t = np.union1d(self.t, other.t)
            return PiecewiseFn(
                t,
                self(t) + other(t),
                self.terminal_slope + other.terminal_slope,
                min(self.grid_step, other.grid_step),
            )
        return PiecewiseFn(self.t, self.v + float(other), self.terminal_slope, self.grid_step)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, PiecewiseFn):
            return self + other * -1.0
        return self + (-float(other))

    def __rsub__(self, other):
        return self * -1.0 + float(other)

    def __mul__(self, factor):
        factor = float(factor)
        return PiecewiseFn(self.t, self.v * factor, self.terminal_slope * factor, self.grid_step)

    __rmul__ = __mul__


class Curve(PiecewiseFn):
    """Non-negative, wide-sense increasing function (arrival, service, energy curves)."""

    def _validate(self) -> None:
        tol = _tol(self.v)
        if self.v[0] < -tol:
            raise ClassViolation(f"curve must be non-negative, got value {self.v[0]:g} at t=0")
        if self.v.size > 1 and np.min(np.diff(self.v)) < -tol:
            raise ClassViolation("curve must be non-decreasing")
        if self.terminal_slope < 0:
            raise ClassViolation("curve terminal slope must be non-negative")


class BoundingFn(PiecewiseFn):
    """Non-negative, wide-sense decreasing function bounding a violation probability."""

    def _validate(self) -> None:
        tol = _tol(self.v)
        if np.min(self.v) < -tol:
            raise ClassViolation("bounding function must be non-negative")
        if self.v.size > 1 and np.max(np.diff(self.v)) > tol:
            raise ClassViolation("bounding function must be non-increasing")
        if self.terminal_slope != 0.0:
            raise ClassViolation("bounding function must be flat beyond its last breakpoint")

    def prob(self, x):
        """Probability reading: ``[fn(x)]_1``, and 1 for any ``x < 0``."""
        return eval_bound(self, x)


class CdfFn(PiecewiseFn):
    """Distribution function with values in [0, 1]; operand of the Stieltjes convolution."""

    def _validate(self) -> None:
        tol = _tol(self.v)
        if np.min(self.v) < -tol or np.max(self.v) > 1 + tol:
            raise ClassViolation("distribution function values must lie in [0, 1]")
        if self.v.size > 1 and np.min(np.diff(self.v)) < -tol:
            raise ClassViolation("distribution function must be non-decreasing")
        if self.terminal_slope != 0.0:
            raise ClassViolation("distribution function must be flat beyond its last breakpoint")


# -- scalar helpers ---------------------------------------------------------

ARG_TOL = 1e-9


def clamp_plus(x):
    """``[x]^+ = max(x, 0)``; works on scalars and arrays."""
    y = np.maximum(np.asarray(x, dtype=float), 0.0)
    return float(y) if y.ndim == 0 else y


def clamp_one(x):
    """``[x]_1 = min(x, 1)``; works on scalars and arrays."""
    y = np.minimum(np.asarray(x, dtype=float), 1.0)
    return float(y) if y.ndim == 0 else y


def eval_bound(fn: PiecewiseFn, x):
    """Evaluate a bounding expression as a probability.

    Arguments below zero give 1 (a vacuous but valid bound); everything else is
    clamped with ``[.]_1``.  Arguments within ``ARG_TOL`` of zero count as zero,
    so rounding in a curve shift cannot flip the bound to the vacuous branch.
    """
    x = np.asarray(x, dtype=float)
    y = np.where(x < -ARG_TOL, 1.0, clamp_one(fn(np.maximum(x, 0.0))))
    return float(y) if y.ndim == 0 else y


# -- constructors -------------------------------------------------------------


def zero(grid_step: float = DEFAULT_STEP) -> PiecewiseFn:
    return PiecewiseFn([0.0], [0.0], 0.0, grid_step)


def constant(c: float, grid_step: float = DEFAULT_STEP) -> PiecewiseFn:
    return PiecewiseFn([0.0], [float(c)], 0.0, grid_step)


def affine(rho: float, sigma: float, grid: Grid | None = None) -> PiecewiseFn:
    """``rho * t + sigma`` tabulated on ``grid``."""
    grid = grid or Grid()
    return PiecewiseFn.sample(lambda t: rho * t + sigma, grid, rho)


def rate_latency(rate: float, latency: float, grid: Grid | None = None) -> PiecewiseFn:
    """``rate * [t - latency]^+`` on ``grid``, with the kink kept as an exact breakpoint."""
    grid = grid or Grid()
    ts = grid.points()
    if 0 < latency < ts[-1]:
        ts = np.union1d(ts, [latency])
    return PiecewiseFn(ts, rate * np.maximum(ts - latency, 0.0), rate, grid.step)


def exponential(a: float, theta: float, grid: Grid | None = None) -> PiecewiseFn:
    """``a * exp(-theta * x)``; flat past the horizon when decaying."""
    grid = grid or Grid()
    ts = grid.points()
    vals = a * np.exp(-theta * ts)
    slope = 0.0 if theta >= 0 else float(-theta * vals[-1])
    return PiecewiseFn(ts, vals, slope, grid.step)


def pwl(points: Sequence[tuple[float, float]], terminal_slope: float | None = None,
        grid_step: float = DEFAULT_STEP) -> PiecewiseFn:
    """Function through ``points``; by default continued with the last segment's slope."""
    pts = sorted((float(t), float(v)) for t, v in points)
    if terminal_slope is None:
        if len(pts) > 1:
            (t0, v0), (t1, v1) = pts[-2], pts[-1]
            terminal_slope = (v1 - v0) / (t1 - t0)
        else:
            terminal_slope = 0.0
    return PiecewiseFn.from_points(pts, terminal_slope, grid_step)


# -- grid operators -----------------------------------------------------------


def common_grid(*fns: PiecewiseFn) -> Grid:
    """Finest step among the operands, out to the furthest last breakpoint."""
    return Grid(step=min(f.grid_step for f in fns), horizon=max(f.horizon for f in fns))


def _convolve_samples(a: np.ndarray, b: np.ndarray, reduce) -> np.ndarray:
    n = a.size
    out = np.empty(n)
    for k in range(n):
        out[k] = reduce(a[: k + 1] + b[k::-1])
    return out


def min_plus_convolve(f: PiecewiseFn, g: PiecewiseFn, grid: Grid | None = None) -> PiecewiseFn:
    """``(f (x) g)(t) = min over grid s in [0, t] of f(s) + g(t - s)``."""
    grid = grid or common_grid(f, g)
    ts = grid.points()
    h = _convolve_samples(np.asarray(f(ts)), np.asarray(g(ts)), np.min)
    return PiecewiseFn(ts, h, min(f.terminal_slope, g.terminal_slope), grid.step)


def max_plus_convolve(f: PiecewiseFn, g: PiecewiseFn, grid: Grid | None = None) -> PiecewiseFn:
    """``(f (x)bar g)(t) = max over grid s in [0, t] of f(s) + g(t - s)``."""
    grid = grid or common_grid(f, g)
    ts = grid.points()
    h = _convolve_samples(np.asarray(f(ts)), np.asarray(g(ts)), np.max)
    return PiecewiseFn(ts, h, max(f.terminal_slope, g.terminal_slope), grid.step)


def _check_deconvolvable(f: PiecewiseFn, g: PiecewiseFn) -> None:
    if f.terminal_slope > g.terminal_slope:
        raise DivergentDeconvolution(
            f"deconvolution diverges: terminal slope {f.terminal_slope:g} of the numerator "
            f"exceeds {g.terminal_slope:g} of the denominator"
        )


def deconvolution_window(f: PiecewiseFn, g: PiecewiseFn, step: float) -> int:
    """Number of grid points ``s`` the deconvolution supremum has to visit.

    Past the last breakpoint of both operands plus one step, ``f(t+s) - g(s)``
    is non-increasing in ``s`` whenever the terminal slopes permit the
    deconvolution at all.
    """
    s_max = max(f.horizon, g.horizon) + step
    return int(math.floor(s_max / step + 1e-9)) + 1


def min_plus_deconvolve(f: PiecewiseFn, g: PiecewiseFn, grid: Grid | None = None) -> PiecewiseFn:
    """``(f (/) g)(t) = sup over s >= 0 of f(t + s) - g(s)``, on the grid."""
    _check_deconvolvable(f, g)
    grid = grid or common_grid(f, g)
    n = grid.size
    m = deconvolution_window(f, g, grid.step)
    fa = np.asarray(f(np.arange(n + m - 1) * grid.step))
    gb = np.asarray(g(np.arange(m) * grid.step))
    out = np.full(n, -np.inf)
    for j in range(m):
        np.maximum(out, fa[j : j + n] - gb[j], out=out)
    return PiecewiseFn(grid.points(), out, f.terminal_slope, grid.step)


def min_plus_deconvolve_at(f: PiecewiseFn, g: PiecewiseFn, t: float = 0.0, step: float | None = None) -> float:
    """Single value ``(f (/) g)(t)``; the bounds only ever need ``t = 0``."""
    _check_deconvolvable(f, g)
    step = step or min(f.grid_step, g.grid_step)
    s = np.arange(deconvolution_window(f, g, step)) * step
    return float(np.max(f(t + s) - g(s)))


def _pointwise(f: PiecewiseFn, g: PiecewiseFn, pick, tail_slope: float) -> PiecewiseFn:
    t = np.union1d(f.t, g.t)
    d = np.asarray(f(t) - g(t))
    extra = []
    if t.size > 1:
        i = np.nonzero(d[:-1] * d[1:] < 0)[0]
        extra.append(t[i] + d[i] / (d[i] - d[i + 1]) * (t[i + 1] - t[i]))
    ds = f.terminal_slope - g.terminal_slope
    if d[-1] != 0 and ds != 0 and -d[-1] / ds > 0:
        extra.append([t[-1] - d[-1] / ds])
    if extra:
        t = np.union1d(t, np.concatenate(extra))
    return PiecewiseFn(t, pick(f(t), g(t)), tail_slope, min(f.grid_step, g.grid_step))


def pointwise_min(f: PiecewiseFn, g: PiecewiseFn) -> PiecewiseFn:
    """``min(f(t), g(t))`` with segment crossings inserted as exact breakpoints."""
    return _pointwise(f, g, np.minimum, min(f.terminal_slope, g.terminal_slope))


def pointwise_max(f: PiecewiseFn, g: PiecewiseFn) -> PiecewiseFn:
    return _pointwise(f, g, np.maximum, max(f.terminal_slope, g.terminal_slope))


def first_reach(g: PiecewiseFn, y) -> np.ndarray:
    """``inf{u >= 0 : g(u) >= y}`` for a non-decreasing ``g`` (``inf`` if never)."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    t = g.t
    v = np.maximum.accumulate(g.v)
    idx = np.searchsorted(v, y, side="left")
    u = np.full(y.shape, np.inf)
    inside = idx < v.size
    i = idx[inside]
    prev = np.maximum(i - 1, 0)
    dv = v[i] - v[prev]
    frac = np.divide(y[inside] - v[prev], dv, out=np.zeros_like(dv), where=dv > 0)
    u[inside] = np.where(i == 0, t[0], t[prev] + frac * (t[i] - t[prev]))
    if g.terminal_slope > 0:
        out = ~inside
        u[out] = t[-1] + (y[out] - v[-1]) / g.terminal_slope
    return u


def horizontal_distance(f: PiecewiseFn, g: PiecewiseFn, grid: Grid | None = None) -> float:
    """Largest delay ``sup_t inf{tau >= 0 : f(t) <= g(t + tau)}`` over the grid."""
    sf, sg = f.terminal_slope, g.terminal_slope
    if sg < sf:
        raise UnboundedDistance(
            f"horizontal distance is unbounded: g grows at rate {sg:g} < {sf:g}"
        )
    grid = grid or common_grid(f, g)
    ts = grid.points()
    reach = first_reach(g, f(ts))
    if not np.all(np.isfinite(reach)):
        raise UnboundedDistance("g never reaches the level of f within the horizon and stays flat")
    return float(max(0.0, np.max(reach - ts)))


def stieltjes_convolve(F: PiecewiseFn, G: PiecewiseFn, grid: Grid | None = None) -> CdfFn:
    """Distribution of an independent sum: ``H(x) = sum_k F(x - y_k) (G(y_k) - G(y_{k-1}))``.

    ``G(y_{-1})`` is taken as 0, so any mass ``G(0)`` sits at the origin.
    """
    grid = grid or common_grid(F, G)
    ts = grid.points()
    a = np.asarray(F(ts))
    db = np.diff(np.asarray(G(ts)), prepend=0.0)
    h = np.convolve(a, db)[: ts.size]
    h = np.maximum.accumulate(np.clip(h, 0.0, 1.0))
    return CdfFn(ts, h, 0.0, grid.step)


def ccdf_to_cdf(f: PiecewiseFn, grid: Grid | None = None) -> CdfFn:
    """``1 - [f]_1`` on the grid; turns a bounding function into a distribution bound."""
    grid = grid or Grid(f.grid_step, f.horizon)
    ts = grid.points()
    return CdfFn(ts, np.clip(1.0 - clamp_one(f(ts)), 0.0, 1.0), 0.0, grid.step)
