"""Arrival and service models, energy-limited service, and delay/backlog bounds."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .curves import (
    BoundingFn,
    Curve,
    PiecewiseFn,
    eval_bound,
    horizontal_distance,
    min_plus_convolve,
    min_plus_deconvolve_at,
    pointwise_min,
)
from .energy import PowerRate, SecModel, bound_grid, energy_to_service_curve

SERVICE_KINDS = ("sc", "ssc")


@dataclass(frozen=True, eq=False)
class ArrivalModel:
    """Traffic envelope ``<f, alpha>`` bounding the virtual backlog against ``alpha``."""

    alpha: Curve
    f: BoundingFn

    def __post_init__(self):
        object.__setattr__(self, "alpha", Curve.of(self.alpha))
        object.__setattr__(self, "f", BoundingFn.of(self.f))


@dataclass(frozen=True, eq=False)
class ServiceModel:
    """Service guarantee ``<g, beta>``; ``kind`` is ``"sc"`` or the strict ``"ssc"``."""

    beta: Curve
    g: BoundingFn
    kind: str = "sc"

    def __post_init__(self):
        if self.kind not in SERVICE_KINDS:
            raise ValueError(f"service kind must be one of {SERVICE_KINDS}, got {self.kind!r}")
        object.__setattr__(self, "beta", Curve.of(self.beta))
        object.__setattr__(self, "g", BoundingFn.of(self.g))


@dataclass(frozen=True)
class DelayBoundResult:
    delay: float
    violation_prob: float
    threshold_x: float


def effective_service(service: ServiceModel, sec: SecModel, p: PowerRate) -> ServiceModel:
    """Service left once the harvested energy limits the server.

    A strict service curve is also a plain one, so either kind is accepted; the
    result is always of kind ``"sc"``.
    """
    energy_service = energy_to_service_curve(sec.alpha2, p)
    beta = pointwise_min(service.beta, energy_service)
    g = min_plus_convolve(service.g, sec.f2)
    return ServiceModel(beta, g, "sc")


def _prob_curve(f: PiecewiseFn, g: PiecewiseFn, args: np.ndarray) -> np.ndarray:
    conv = min_plus_convolve(f, g, bound_grid([f, g], float(np.max(args))))
    return np.atleast_1d(eval_bound(conv, args))


def delay_curve(arrival: ArrivalModel, eff: ServiceModel, xs) -> tuple[np.ndarray, np.ndarray]:
    """Delay values and violation probabilities for every ``x`` in ``xs``."""
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    delays = np.array([horizontal_distance(arrival.alpha + float(x), eff.beta) for x in xs])
    return delays, _prob_curve(arrival.f, eff.g, xs)


def delay_bound(arrival: ArrivalModel, eff: ServiceModel, x: float) -> DelayBoundResult:
    """The delay exceeds ``h(alpha + x, beta)`` with probability at most ``f (x) g (x)``."""
    delays, probs = delay_curve(arrival, eff, [x])
    return DelayBoundResult(float(delays[0]), float(probs[0]), float(x))


def backlog_shift(arrival: ArrivalModel, eff: ServiceModel) -> float:
    return min_plus_deconvolve_at(arrival.alpha, eff.beta)


def backlog_curve(arrival: ArrivalModel, eff: ServiceModel, xs) -> np.ndarray:
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    return _prob_curve(arrival.f, eff.g, xs - backlog_shift(arrival, eff))


def backlog_bound(arrival: ArrivalModel, eff: ServiceModel, x: float) -> float:
    """Upper bound on ``Prob{B(t) > x}``."""
    return float(backlog_curve(arrival, eff, [x])[0])


def concatenate(nodes: Sequence[tuple[ServiceModel, SecModel, PowerRate]]) -> ServiceModel:
    """End-to-end service of energy-limited nodes in tandem."""
    if not nodes:
        raise ValueError("at least one node is required")
    effs = [effective_service(*node) for node in nodes]
    beta, g = effs[0].beta, effs[0].g
    for eff in effs[1:]:
        beta = min_plus_convolve(beta, eff.beta)
        g = min_plus_convolve(g, eff.g)
    return ServiceModel(beta, g, "sc")
