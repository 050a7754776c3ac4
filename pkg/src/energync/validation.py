"""Monte-Carlo validation of a scenario's analytical bounds."""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .analysis import energy_bounds, node_effective, outage_bounds, path_service, quantile_delay
from .errors import InvalidSpec, ModelMismatch
from .scenario import Scenario
from .service import backlog_curve, delay_curve
from .sim import draw_increments, empirical_ccdf, replication_rng, serve, virtual_delay

CHUNK = 250
_EPS = 1e-9


@dataclass(frozen=True)
class ReportRow:
    metric: str
    scope: str
    t: float
    x: float
    empirical: float
    lower: float
    upper: float
    n: int
    se: float
    passed: bool
    asserted: bool = True


COLUMNS = ("metric", "scope", "t", "x", "empirical", "lower", "upper", "n", "se", "pass", "asserted")


def _num(v: float) -> str:
    return format(float(v), ".10g")


@dataclass(frozen=True)
class ValidationReport:
    header: tuple[str, ...]
    rows: tuple[ReportRow, ...]

    @property
    def ok(self) -> bool:
        return all(r.passed for r in self.rows if r.asserted)

    def failures(self) -> list[ReportRow]:
        return [r for r in self.rows if r.asserted and not r.passed]

    def to_csv(self) -> str:
        buf = io.StringIO()
        for line in self.header:
            buf.write(f"# {line}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(COLUMNS)
        for r in self.rows:
            w.writerow([r.metric, r.scope, _num(r.t), _num(r.x), _num(r.empirical), _num(r.lower), _num(r.upper),
                        r.n, _num(r.se), "pass" if r.passed else "FAIL", "yes" if r.asserted else "no"])
        return buf.getvalue()


# -- simulation ---------------------------------------------------------------


@dataclass(frozen=True)
class _Layout:
    dt: float
    steps: int
    idx: tuple[int, ...]

    @classmethod
    def of(cls, sc: Scenario) -> "_Layout":
        a = sc.analysis
        n_h = int(math.floor(a.horizon / a.sim_step + 1e-9))
        steps = int(math.floor(a.horizon * (1 + a.drain) / a.sim_step + 1e-9))
        return cls(a.sim_step, steps, tuple(int(round(f * n_h)) for f in a.t_samples))

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.dt


def _conv_at(x: np.ndarray, vals: np.ndarray, k: int, reduce) -> np.ndarray:
    # (X (x) f)(k) over step pairs: reduce_j X_j + f((k - j) dt)
    return reduce(x[:, : k + 1] + vals[k::-1][None, :], axis=1)


def _stream(sc: Scenario, node_index: int, source_index: int) -> int:
    return 1 + node_index * len(sc.sources) + source_index


def _cumulative(inc: np.ndarray) -> np.ndarray:
    return np.concatenate([np.zeros((inc.shape[0], 1)), np.cumsum(inc, axis=1)], axis=1)


def simulate_chunk(sc: Scenario, start: int, stop: int, keep_first: bool = False):
    """Replications ``start..stop-1``; returns per-replication samples at the t-samples.

    With ``keep_first`` the full traces of replication ``start`` are returned too.
    """
    lay = _Layout.of(sc)
    times, idx, dt = lay.times, list(lay.idx), lay.dt
    seed = sc.analysis.seed
    reps = range(start, stop)
    out: dict[str, np.ndarray] = {}
    traces = {}

    flow = sc.flow
    if flow is not None:
        if flow.generator is None:
            raise InvalidSpec(f"flow {flow.name!r} has no generator")
        arr = _cumulative(np.stack([draw_increments(flow.generator, lay.steps, dt, replication_rng(seed, i, 0))
                                    for i in reps]))
        alpha = sc.curve(flow.alpha)(times)
        for c, k in enumerate(idx):
            out[f"arrival_envelope|{flow.name}|{c}"] = arr[:, k] - _conv_at(arr, alpha, k, np.min)
    else:
        arr = np.zeros((len(reps), lay.steps + 1))
    first_arrivals = arr
    sed = sc.discharge
    consumption = sed.consumption if sed is not None else "delivered"

    for ni, node in enumerate(sc.path_nodes):
        charged = np.zeros_like(arr)
        for name in node.sources:
            src = sc.source(name)
            if src.generator is None:
                raise InvalidSpec(f"source {name!r} has no generator")
            stream = _stream(sc, ni, sc.sources.index(src))
            c = _cumulative(np.stack([draw_increments(src.generator, lay.steps, dt, replication_rng(seed, i, stream))
                                      for i in reps]))
            charged += c
            a1, a2 = sc.curve(src.alpha1)(times), sc.curve(src.alpha2)(times)
            for ci, k in enumerate(idx):
                out[f"sec_upper|{node.name}/{name}|{ci}"] = c[:, k] - _conv_at(c, a2, k, np.min)
                out[f"sec_lower|{node.name}/{name}|{ci}"] = c[:, k] - _conv_at(c, a1, k, np.max)
        schedule = sc.curve(node.schedule_text)(times)
        dep, used, _ = serve(arr, charged, np.broadcast_to(schedule, arr.shape), sc.power, dt, consumption)
        energy, backlog = charged - used, arr - dep
        delays = virtual_delay(arr, dep, dt, idx)
        for ci, k in enumerate(idx):
            out[f"energy|{node.name}|{ci}"] = energy[:, k]
            out[f"backlog|{node.name}|{ci}"] = backlog[:, k]
            out[f"delay|{node.name}|{ci}"] = delays[:, ci]
        if sed is not None:
            b1, b2 = sc.curve(sed.beta1)(times), sc.curve(sed.beta2)(times)
            for ci, k in enumerate(idx):
                out[f"sed_budget|{node.name}|{ci}"] = _conv_at(charged, b1, k, np.min) - used[:, k]
                out[f"sed_floor|{node.name}|{ci}"] = _conv_at(charged, b2, k, np.min) - used[:, k]
        if keep_first:
            traces[node.name] = np.column_stack([times, arr[0], dep[0], charged[0], used[0], energy[0], backlog[0]])
        arr = dep

    if flow is not None and len(sc.path.nodes) > 1:
        e2e = virtual_delay(first_arrivals, arr, dt, idx)
        for ci, k in enumerate(idx):
            out[f"path_delay||{ci}"] = e2e[:, ci]
            out[f"path_backlog||{ci}"] = first_arrivals[:, k] - arr[:, k]
    return (out, traces) if keep_first else out


def _chunk_job(args):
    return simulate_chunk(*args)


def run_replications(sc: Scenario, workers: int = 1, keep_first: bool = False):
    """All replications, merged in index order; the result does not depend on ``workers``."""
    total = sc.analysis.replications
    jobs = [(sc, s, min(s + CHUNK, total)) for s in range(0, total, CHUNK)]
    traces = {}
    if keep_first:
        first, traces = simulate_chunk(*jobs[0], keep_first=True)
        jobs = jobs[1:]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_chunk_job, jobs))
    else:
        parts = [_chunk_job(j) for j in jobs]
    if keep_first:
        parts.insert(0, first)
    merged = {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}
    return merged, traces


# -- report ---------------------------------------------------------------------


def _schedule_slack(sc: Scenario, node) -> float:
    """Smallest ``S(s, t) - beta(t - s)`` over step pairs up to the horizon."""
    lay = _Layout.of(sc)
    n_h = max(lay.idx)
    t = lay.times[: n_h + 1]
    s = sc.curve(node.schedule_text)(t)
    beta = sc.curve(node.beta)(t)
    worst = math.inf
    for k in range(n_h + 1):
        worst = min(worst, float(np.min(s[k] - s[: k + 1] - beta[k::-1])))
    return worst


def header_lines(sc: Scenario, command: str) -> tuple[str, ...]:
    a = sc.analysis
    return (
        f"energync {command}",
        f"grid_step={_num(a.grid_step)} horizon={_num(a.horizon)} sim_step={_num(a.sim_step)} "
        f"drain={_num(a.drain)} replications={a.replications} seed={a.seed} "
        f"t_samples={';'.join(_num(t) for t in a.t_samples)}",
        "replication i draws from SeedSequence(seed, spawn_key=(i, stream)); "
        "stream 0 is the flow, 1 + node_index * n_sources + source_index a charging source",
    )


class _Rows:
    def __init__(self, samples, xs, times):
        self.samples, self.xs, self.times, self.rows = samples, xs, times, []

    def add(self, metric, scope, key, lower, upper, asserted=True, levels=None, below=False):
        """One row per (t, x); ``levels`` replaces x as the threshold, ``below`` counts samples < x."""
        lower = np.broadcast_to(np.asarray(lower, dtype=float), self.xs.shape)
        upper = np.broadcast_to(np.asarray(upper, dtype=float), self.xs.shape)
        thresholds = self.xs if levels is None else np.asarray(levels, dtype=float)
        # exceedances smaller than float round-off of the cumulative sums do not count
        slack = _EPS * np.maximum(1.0, np.abs(thresholds))
        for ci, t in enumerate(self.times):
            data = self.samples[f"{key}|{ci}"]
            if below:
                prob = np.array([(data < x).mean() for x in thresholds - slack])
                se = np.sqrt(prob * (1 - prob) / data.size)
            else:
                prob, se = empirical_ccdf(data, thresholds + slack)
            for j, x in enumerate(self.xs):
                ok = lower[j] - 3 * se[j] - _EPS <= prob[j] <= upper[j] + 3 * se[j] + _EPS
                self.rows.append(ReportRow(metric, scope, t, x, prob[j], lower[j], upper[j], data.size, se[j],
                                           bool(ok), asserted))


def validate(sc: Scenario, workers: int = 1, keep_traces: bool = False):
    """Simulate the scenario and check every bound it declares.

    Raises :class:`ModelMismatch` (carrying the report as ``.report``) when a
    generator breaks its own declared envelope; otherwise returns the report,
    or ``(report, traces)`` with ``keep_traces``.
    """
    samples, traces = run_replications(sc, workers, keep_first=keep_traces)
    lay = _Layout.of(sc)
    xs = np.asarray(sc.analysis.x_grid, dtype=float)
    rr = _Rows(samples, xs, [k * lay.dt for k in lay.idx])
    one, zero = np.ones_like(xs), np.zeros_like(xs)

    # declared envelopes first
    flow = sc.flow
    if flow is not None:
        rr.add("arrival_envelope", flow.name, f"arrival_envelope|{flow.name}", zero,
               np.minimum(sc.bounding(flow.f)(xs), 1.0))
    for node in sc.path_nodes:
        for name in node.sources:
            src = sc.source(name)
            scope = f"{node.name}/{name}"
            rr.add("sec_upper", scope, f"sec_upper|{scope}", zero, np.minimum(sc.bounding(src.f2)(xs), 1.0))
            rr.add("sec_lower", scope, f"sec_lower|{scope}", np.minimum(sc.bounding(src.f1)(xs), 1.0), one)
        if sc.discharge is not None:
            d = sc.discharge
            rr.add("sed_budget", node.name, f"sed_budget|{node.name}", np.minimum(sc.bounding(d.g1)(xs), 1.0), one)
            rr.add("sed_floor", node.name, f"sed_floor|{node.name}", zero, np.minimum(sc.bounding(d.g2)(xs), 1.0))
        slack = _schedule_slack(sc, node)
        rr.rows.append(ReportRow("service_schedule", node.name, sc.analysis.horizon, 0.0, float(slack < -1e-9),
                                 0.0, 0.0, 1, 0.0, slack >= -1e-9))
    compliance_ok = all(r.passed for r in rr.rows)

    # bound checks
    arrival = sc.arrival()
    for i, node in enumerate(sc.path_nodes):
        energy = energy_bounds(sc, node, xs)
        if energy is not None:
            rr.add("energy", node.name, f"energy|{node.name}", energy[0], energy[1])
        outage = outage_bounds(sc, node, xs)
        if outage is not None:
            rr.add("outage", node.name, f"energy|{node.name}", outage, one, asserted=False, below=True)
        if i == 0 and arrival is not None:
            eff = node_effective(sc, node)
            rr.add("backlog", node.name, f"backlog|{node.name}", zero, backlog_curve(arrival, eff, xs))
            h, prob = delay_curve(arrival, eff, xs)
            rr.add("delay", node.name, f"delay|{node.name}", zero, prob, levels=h)
    if arrival is not None and len(sc.path.nodes) > 1:
        net = path_service(sc)
        rr.add("path_backlog", "path", "path_backlog|", zero, backlog_curve(arrival, net, xs))
        h, prob = delay_curve(arrival, net, xs)
        rr.add("path_delay", "path", "path_delay|", zero, prob, levels=h)
        x_eps, h_eps = quantile_delay(arrival, net)
        for ci, t in enumerate(rr.times):
            data = samples[f"path_delay||{ci}"]
            q = float(np.quantile(data, 0.999, method="higher"))
            rr.rows.append(ReportRow("path_delay_q999", "path", t, x_eps, q, 0.0, h_eps, data.size, 0.0,
                                     q <= h_eps + _EPS))

    report = ValidationReport(header_lines(sc, "validate"), tuple(rr.rows))
    if not compliance_ok:
        bad = [r for r in rr.rows if not r.passed and r.metric in
               ("arrival_envelope", "sec_upper", "sec_lower", "sed_budget", "sed_floor", "service_schedule")]
        err = ModelMismatch(f"{bad[0].metric} for {bad[0].scope} is violated "
                            f"(empirical {_num(bad[0].empirical)} at x={_num(bad[0].x)}, t={_num(bad[0].t)})")
        err.report = report
        raise err
    return (report, traces) if keep_traces else report
