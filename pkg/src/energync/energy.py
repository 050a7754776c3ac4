"""Energy charging/discharging envelopes and the bounds built on them.

A charging process ``C(t)`` is described by a lower and an upper curve, each
with a bounding function (:class:`SecModel`); the energy actually drawn,
``C*(t)``, is described relative to ``C`` by two budget curves
(:class:`SedModel`).  From those the module derives two-sided bounds on the
stored energy ``E(t) = C(t) - C*(t)``, merges several harvesters feeding one
battery, and bounds the chance that an energy-oblivious schedule drains the
battery below a safety threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .curves import (
    BoundingFn,
    Curve,
    Grid,
    PiecewiseFn,
    ccdf_to_cdf,
    clamp_one,
    clamp_plus,
    common_grid,
    eval_bound,
    first_reach,
    max_plus_convolve,
    min_plus_convolve,
    min_plus_deconvolve_at,
    pointwise_max,
    stieltjes_convolve,
    zero,
)
from .errors import ClassViolation, NonInvertiblePower

if TYPE_CHECKING:
    from .service import ServiceModel


def _check_ordered(lower: PiecewiseFn, upper: PiecewiseFn, what: str) -> None:
    t = np.union1d(lower.t, upper.t)
    gap = np.asarray(upper(t) - lower(t))
    tol = 1e-9 * max(1.0, float(np.max(np.abs(upper(t)))))
    if np.min(gap) < -tol or upper.terminal_slope < lower.terminal_slope:
        raise ClassViolation(f"{what}: lower curve exceeds upper curve")


@dataclass(frozen=True, eq=False)
class SecModel:
    """Charging envelope ``<f1, alpha1, f2, alpha2>``.

    ``alpha1``/``f1`` lower-bound the harvested energy over every window,
    ``alpha2``/``f2`` upper-bound it.
    """

    alpha1: Curve
    f1: BoundingFn
    alpha2: Curve
    f2: BoundingFn

    def __post_init__(self):
        for name, cls in (("alpha1", Curve), ("f1", BoundingFn), ("alpha2", Curve), ("f2", BoundingFn)):
            object.__setattr__(self, name, cls.of(getattr(self, name)))
        _check_ordered(self.alpha1, self.alpha2, "charging model")

    @classmethod
    def upper_only(cls, alpha2: PiecewiseFn, f2: PiecewiseFn) -> "SecModel":
        """Model with a trivial lower envelope (zero curve, zero bounding function)."""
        return cls(zero(alpha2.grid_step), zero(f2.grid_step), alpha2, f2)


@dataclass(frozen=True, eq=False)
class SedModel:
    """Discharging envelope ``<g1, beta1, g2, beta2>``; ``beta1`` is the energy budget."""

    beta1: Curve
    g1: BoundingFn
    beta2: Curve
    g2: BoundingFn

    def __post_init__(self):
        for name, cls in (("beta1", Curve), ("g1", BoundingFn), ("beta2", Curve), ("g2", BoundingFn)):
            object.__setattr__(self, name, cls.of(getattr(self, name)))
        _check_ordered(self.beta2, self.beta1, "discharging model")


@dataclass(frozen=True)
class PowerRate:
    """Power drawn as a function of service rate, with its generalised inverse.

    ``kind`` is one of ``identity``, ``linear`` (``c * r``), ``quadratic``
    (``c * r**2``) or ``table`` (piecewise-linear through ``table`` points,
    continued with the last segment's slope).
    """

    kind: str = "identity"
    coefficient: float = 1.0
    table: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        if self.kind not in ("identity", "linear", "quadratic", "table"):
            raise ValueError(f"unknown power-rate kind {self.kind!r}")
        if self.kind in ("linear", "quadratic") and not self.coefficient > 0:
            raise ValueError("power-rate coefficient must be positive")
        if self.kind == "table":
            pts = tuple(sorted((float(r), float(p)) for r, p in self.table))
            if len(pts) < 2 or pts[0] != (0.0, 0.0):
                raise ValueError("power-rate table needs at least two points and must start at (0, 0)")
            rates = np.array([r for r, _ in pts])
            powers = np.array([p for _, p in pts])
            if np.any(np.diff(rates) <= 0) or np.any(np.diff(powers) < 0):
                raise ValueError("power-rate table must be increasing")
            object.__setattr__(self, "table", pts)

    @classmethod
    def identity(cls) -> "PowerRate":
        return cls("identity")

    @classmethod
    def linear(cls, c: float) -> "PowerRate":
        return cls("linear", c)

    @classmethod
    def quadratic(cls, c: float = 1.0) -> "PowerRate":
        return cls("quadratic", c)

    @classmethod
    def from_table(cls, points) -> "PowerRate":
        return cls("table", 1.0, tuple(points))

    def _table_fn(self) -> PiecewiseFn:
        (r0, p0), (r1, p1) = self.table[-2], self.table[-1]
        return PiecewiseFn.from_points(self.table, (p1 - p0) / (r1 - r0))

    def forward(self, rate):
        """Power needed to serve at ``rate``."""
        r = np.asarray(rate, dtype=float)
        if np.any(r < 0):
            raise NonInvertiblePower("service rate must be non-negative")
        if self.kind == "identity":
            p = r * 1.0
        elif self.kind == "linear":
            p = self.coefficient * r
        elif self.kind == "quadratic":
            p = self.coefficient * r * r
        else:
            p = np.asarray(self._table_fn()(r))
        return float(p) if p.ndim == 0 else p

    def inverse(self, power):
        """Generalised inverse ``inf{r : forward(r) >= power}``."""
        y = np.asarray(power, dtype=float)
        if np.any(y < 0):
            raise NonInvertiblePower("power must be non-negative")
        if self.kind == "identity":
            r = y * 1.0
        elif self.kind == "linear":
            r = y / self.coefficient
        elif self.kind == "quadratic":
            r = np.sqrt(y / self.coefficient)
        else:
            r = first_reach(self._table_fn(), y).reshape(y.shape)
            if not np.all(np.isfinite(r)):
                raise NonInvertiblePower(
                    f"power {float(np.max(y)):g} exceeds the range of the power-rate table"
                )
        return float(r) if r.ndim == 0 else r

    @property
    def tail_ratio(self) -> float:
        """``lim forward(r) / r`` as ``r`` grows; converts instantaneous bursts."""
        if self.kind == "identity":
            return 1.0
        if self.kind == "linear":
            return self.coefficient
        if self.kind == "quadratic":
            return math.inf
        return self._table_fn().terminal_slope

    def burst_service(self, energy: float) -> float:
        """Service supported by energy that arrives all at once."""
        if energy <= 0:
            return 0.0
        ratio = self.tail_ratio
        if ratio == 0:
            raise NonInvertiblePower("a bounded power-rate function turns an energy burst into unbounded service")
        return energy / ratio

    def burst_energy(self, service: float) -> float:
        """Energy needed to deliver ``service`` all at once."""
        if service <= 0:
            return 0.0
        ratio = self.tail_ratio
        if math.isinf(ratio):
            raise NonInvertiblePower("instantaneous service needs unbounded power under this power-rate function")
        return service * ratio


def _segment_slopes(c: PiecewiseFn) -> tuple[np.ndarray, np.ndarray]:
    dt = np.diff(c.t)
    return np.maximum(np.diff(c.v) / dt, 0.0), dt


def energy_to_service_curve(c: PiecewiseFn, p: PowerRate) -> Curve:
    """Service an energy curve can pay for: integrate ``P^-1(c'(x))`` segment by segment.

    A non-zero ``c(0)`` is an instantaneous burst and is converted with
    :meth:`PowerRate.burst_service`.
    """
    c = Curve.of(c)
    slopes, dt = _segment_slopes(c)
    start = p.burst_service(float(c.v[0]))
    served = np.concatenate([[start], start + np.cumsum(np.asarray(p.inverse(slopes)) * dt)])
    return Curve(c.t, served, p.inverse(c.terminal_slope), c.grid_step)


def service_to_energy_curve(s: PiecewiseFn, p: PowerRate) -> Curve:
    """Energy a service curve consumes: integrate ``P(s'(x))`` segment by segment."""
    s = Curve.of(s)
    slopes, dt = _segment_slopes(s)
    start = p.burst_energy(float(s.v[0]))
    used = np.concatenate([[start], start + np.cumsum(np.asarray(p.forward(slopes)) * dt)])
    return Curve(s.t, used, p.forward(s.terminal_slope), s.grid_step)


def bound_grid(fns: Sequence[PiecewiseFn], xmax: float) -> Grid:
    """Grid at the operands' finest step that just covers ``[0, xmax]``."""
    step = min(f.grid_step for f in fns)
    return Grid(step, math.ceil(max(xmax, 0.0) / step - 1e-9) * step)


@dataclass(frozen=True, eq=False)
class EnergyBoundPair:
    """Two-sided bound on ``Prob{E(t) > x}``.

    ``lower_conv`` is ``f1 (x)bar g1`` and ``upper_conv`` is ``f2 (x) g2``;
    both are read at ``x`` minus the matching shift.
    """

    lower_conv: PiecewiseFn
    upper_conv: PiecewiseFn
    shift_lower: float
    shift_upper: float

    def lower(self, x):
        # Prob{E > x} cannot grow with x, so below the shift the value at the
        # shift still holds; this keeps the bound monotone.
        arg = np.maximum(np.asarray(x, dtype=float) - self.shift_lower, 0.0)
        out = clamp_plus(self.lower_conv(arg) - 1.0)
        return float(out) if np.ndim(out) == 0 else out

    def upper(self, x):
        return eval_bound(self.upper_conv, np.asarray(x, dtype=float) - self.shift_upper)


def residual_energy_bounds(sec: SecModel, sed: SedModel, xmax: float | None = None) -> EnergyBoundPair:
    """Lower and upper bounds on the probability that stored energy exceeds ``x``.

    :param xmax: largest ``x`` the caller will ask about; the convolutions are
        then only computed as far as needed.  Defaults to the full common grid.
    """
    shift_lower = min_plus_deconvolve_at(sec.alpha1, sed.beta1)
    shift_upper = min_plus_deconvolve_at(sec.alpha2, sed.beta2)

    def grid(f, g, shift):
        return common_grid(f, g) if xmax is None else bound_grid([f, g], xmax - shift)

    lower = max_plus_convolve(sec.f1, sed.g1, grid(sec.f1, sed.g1, shift_lower))
    upper = min_plus_convolve(sec.f2, sed.g2, grid(sec.f2, sed.g2, shift_upper))
    return EnergyBoundPair(lower, upper, shift_lower, shift_upper)


def combine_sources(sources: Sequence[SecModel], grid: Grid | None = None) -> SecModel:
    """Envelope of several harvesters charging one battery, with no independence assumption."""
    if not sources:
        raise ValueError("at least one source is required")
    if len(sources) == 1:
        return sources[0]
    alpha1, alpha2 = sources[0].alpha1, sources[0].alpha2
    f1, f2 = sources[0].f1, sources[0].f2
    for src in sources[1:]:
        alpha1 = alpha1 + src.alpha1
        alpha2 = alpha2 + src.alpha2
        f1 = max_plus_convolve(f1, src.f1, grid)
        f2 = min_plus_convolve(f2, src.f2, grid)
    f1 = pointwise_max(f1 - (len(sources) - 1), zero(f1.grid_step))
    return SecModel(alpha1, f1, alpha2, f2)


def _independent_sum(fa: PiecewiseFn, fb: PiecewiseFn, grid: Grid | None) -> PiecewiseFn:
    grid = grid or common_grid(fa, fb)
    cdf = stieltjes_convolve(ccdf_to_cdf(fa, grid), ccdf_to_cdf(fb, grid), grid)
    return 1.0 - cdf


def combine_sources_independent(sources: Sequence[SecModel], grid: Grid | None = None) -> SecModel:
    """Tighter envelope for statistically independent harvesters (caller's assumption)."""
    if not sources:
        raise ValueError("at least one source is required")
    if len(sources) == 1:
        return sources[0]
    alpha1, alpha2 = sources[0].alpha1, sources[0].alpha2
    f1, f2 = sources[0].f1, sources[0].f2
    for src in sources[1:]:
        alpha1 = alpha1 + src.alpha1
        alpha2 = alpha2 + src.alpha2
        f1 = _independent_sum(f1, src.f1, grid)
        f2 = _independent_sum(f2, src.f2, grid)
    return SecModel(alpha1, f1, alpha2, f2)


def outage_shift(sec: SecModel, service: "ServiceModel", p: PowerRate) -> float:
    return min_plus_deconvolve_at(sec.alpha2, service_to_energy_curve(service.beta, p))


def energy_outage_curve(sec: SecModel, service: "ServiceModel", p: PowerRate, xs) -> np.ndarray:
    """:func:`energy_outage_bound` for every threshold in ``xs`` at once."""
    if service.kind != "ssc":
        raise ValueError("the outage bound needs a strict stochastic service curve (kind 'ssc')")
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    shift = outage_shift(sec, service, p)
    args = xs - shift
    conv = min_plus_convolve(sec.f2, service.g, bound_grid([sec.f2, service.g], float(np.max(args))))
    return clamp_plus(1.0 - eval_bound(conv, args))


def energy_outage_bound(sec: SecModel, service: "ServiceModel", p: PowerRate, x: float) -> float:
    """Lower bound on ``Prob{E(t) < x}`` when the node follows an energy-oblivious schedule.

    ``x`` is the safety threshold; the bound holds for every ``t``.
    """
    return float(energy_outage_curve(sec, service, p, [x])[0])
