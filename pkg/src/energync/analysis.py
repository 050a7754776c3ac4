"""Analytical bound tables for a scenario."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .curves import clamp_one, clamp_plus, horizontal_distance, min_plus_convolve
from .energy import combine_sources, combine_sources_independent, energy_outage_curve, residual_energy_bounds
from .scenario import NodeDecl, Scenario
from .service import ArrivalModel, ServiceModel, backlog_curve, concatenate, delay_curve, effective_service

QUANTILE_EPS = 1e-3


@dataclass(frozen=True)
class Row:
    metric: str
    x: float
    value: float


def _scoped(metric: str, node: NodeDecl, sc: Scenario) -> str:
    return metric if len(sc.path.nodes) == 1 else f"{metric}@{node.name}"


def energy_bounds(sc: Scenario, node: NodeDecl, xs) -> tuple[np.ndarray, np.ndarray] | None:
    """Lower and upper bounds on ``Prob{E(t) > x}``, or ``None`` without a discharge model."""
    sed = sc.sed()
    if sed is None:
        return None
    pair = residual_energy_bounds(sc.node_sec(node), sed, xmax=float(np.max(xs)))
    return np.atleast_1d(pair.lower(xs)), np.atleast_1d(pair.upper(xs))


def outage_bounds(sc: Scenario, node: NodeDecl, xs) -> np.ndarray | None:
    if node.kind != "ssc":
        return None
    return energy_outage_curve(sc.node_sec(node), sc.service(node), sc.power, xs)


def node_effective(sc: Scenario, node: NodeDecl) -> ServiceModel:
    return effective_service(sc.service(node), sc.node_sec(node), sc.power)


def path_service(sc: Scenario) -> ServiceModel:
    return concatenate([(sc.service(n), sc.node_sec(n), sc.power) for n in sc.path_nodes])


def quantile_delay(arrival: ArrivalModel, eff: ServiceModel, eps: float = QUANTILE_EPS) -> tuple[float, float]:
    """Smallest grid ``x`` whose violation probability is at most ``eps``, and its delay bound."""
    conv = min_plus_convolve(arrival.f, eff.g)
    xs = conv.t
    ok = np.nonzero(clamp_one(conv(xs)) <= eps)[0]
    if ok.size == 0:
        return float("inf"), float("inf")
    x = float(xs[ok[0]])
    return x, horizontal_distance(arrival.alpha + x, eff.beta)


def bound_rows(sc: Scenario) -> list[Row]:
    """Every analytical quantity the scenario supports, evaluated on its x-grid."""
    xs = np.asarray(sc.analysis.x_grid, dtype=float)
    rows: list[Row] = []

    def emit(metric, values):
        rows.extend(Row(metric, float(x), float(v)) for x, v in zip(xs, values))

    arrival = sc.arrival()
    for i, node in enumerate(sc.path_nodes):
        energy = energy_bounds(sc, node, xs)
        if energy is not None:
            emit(_scoped("residual_lower", node, sc), energy[0])
            emit(_scoped("residual_upper", node, sc), energy[1])
        outage = outage_bounds(sc, node, xs)
        if outage is not None:
            emit(_scoped("outage_lb", node, sc), outage)
        if len(node.sources) > 1:
            models = [sc.sec(sc.source(s)) for s in node.sources]
            dep, ind = combine_sources(models), combine_sources_independent(models)
            emit(_scoped("sec_f1_dep", node, sc), dep.f1(xs))
            emit(_scoped("sec_f2_dep", node, sc), dep.f2(xs))
            emit(_scoped("sec_f1_ind", node, sc), ind.f1(xs))
            emit(_scoped("sec_f2_ind", node, sc), ind.f2(xs))
        if i == 0 and arrival is not None:
            eff = node_effective(sc, node)
            # the backlog deconvolution is the stability check, so it runs first
            backlog = backlog_curve(arrival, eff, xs)
            delays, probs = delay_curve(arrival, eff, xs)
            emit(_scoped("delay_h", node, sc), delays)
            emit(_scoped("delay_prob", node, sc), probs)
            emit(_scoped("backlog", node, sc), backlog)
    if arrival is not None and len(sc.path.nodes) > 1:
        net = path_service(sc)
        backlog = backlog_curve(arrival, net, xs)
        delays, probs = delay_curve(arrival, net, xs)
        emit("path_delay_h", delays)
        emit("path_delay_prob", probs)
        emit("path_backlog", backlog)
    return rows


def combination_series(sc: Scenario, node: NodeDecl, xs) -> dict[str, np.ndarray]:
    """Dependent ("old") and independent ("new") bounding functions as probabilities."""
    models = [sc.sec(sc.source(s)) for s in node.sources]
    dep, ind = combine_sources(models), combine_sources_independent(models)
    return {
        "old_lower": clamp_plus(dep.f1(xs)),
        "old_upper": clamp_one(dep.f2(xs)),
        "new_lower": clamp_plus(ind.f1(xs)),
        "new_upper": clamp_one(ind.f2(xs)),
    }
