"""Discrete-time Monte-Carlo engine for energy-limited FIFO servers.

Traffic and energy are fluid.  Every process is stored as a cumulative
sequence on a uniform step ``dt``; increments during step ``k`` are credited at
index ``k + 1``.

Replication ``i`` draws from its own generator seeded with
``SeedSequence(master_seed, spawn_key=(i, stream))`` so that results do not
depend on how replications are split across workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .curves import PiecewiseFn
from .energy import PowerRate
from .errors import EmptySamples, InvalidSpec, StepMismatch

DEFAULT_SIM_STEP = 1e-2
_TOL = 1e-9

GENERATOR_PARAMS = {
    "constant": ("rate",),
    "onoff": ("on_rate", "p_on_off", "p_off_on", "start"),
    "cpoisson": ("lam", "mean_jump"),
    "noisy": ("base_rate", "noise"),
}
_OPTIONAL = {"start": "stationary"}


@dataclass(frozen=True)
class GeneratorSpec:
    """A stochastic cumulative process.

    ``constant``: deterministic ``rate``.
    ``onoff``: two-state Markov chain per step, ``on_rate`` while on; ``start``
    is ``on``, ``off`` or ``stationary``.
    ``cpoisson``: Poisson(``lam * dt``) jumps per step, exponential sizes with
    mean ``mean_jump``.
    ``noisy``: ``base_rate`` plus uniform noise in ``[-noise, noise]``.
    """

    kind: str
    params: Mapping[str, float | str] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in GENERATOR_PARAMS:
            raise InvalidSpec(f"unknown generator kind {self.kind!r}")
        allowed = GENERATOR_PARAMS[self.kind]
        params = {**{k: v for k, v in _OPTIONAL.items() if k in allowed}, **dict(self.params)}
        unknown = set(params) - set(allowed)
        missing = set(allowed) - set(params)
        if unknown or missing:
            raise InvalidSpec(f"{self.kind} generator: unknown {sorted(unknown)}, missing {sorted(missing)}")
        for k, v in params.items():
            if k != "start" and not (isinstance(v, (int, float)) and math.isfinite(v) and v >= 0):
                raise InvalidSpec(f"{self.kind} generator: {k} must be a non-negative number")
        if self.kind == "onoff":
            if not (0 < params["p_on_off"] <= 1 and 0 < params["p_off_on"] <= 1):
                raise InvalidSpec("onoff generator: switching probabilities must lie in (0, 1]")
            if params["start"] not in ("on", "off", "stationary"):
                raise InvalidSpec("onoff generator: start must be on, off or stationary")
        if self.kind == "noisy" and params["noise"] > params["base_rate"]:
            raise InvalidSpec("noisy generator: noise larger than base_rate gives negative increments")
        if self.kind == "cpoisson" and params["mean_jump"] <= 0:
            raise InvalidSpec("cpoisson generator: mean_jump must be positive")
        object.__setattr__(self, "params", dict(sorted(params.items())))

    @property
    def mean_rate(self) -> float:
        p = self.params
        if self.kind == "constant":
            return float(p["rate"])
        if self.kind == "onoff":
            return p["on_rate"] * p["p_off_on"] / (p["p_on_off"] + p["p_off_on"])
        if self.kind == "cpoisson":
            return p["lam"] * p["mean_jump"]
        return float(p["base_rate"])


SourceSpec = GeneratorSpec
FlowSpec = GeneratorSpec


def replication_rng(master_seed: int, index: int, stream: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(index, stream)))


def draw_increments(spec: GeneratorSpec, steps: int, dt: float, rng: np.random.Generator) -> np.ndarray:
    """Per-step increments of one realisation."""
    p = spec.params
    if spec.kind == "constant":
        return np.full(steps, p["rate"] * dt)
    if spec.kind == "cpoisson":
        counts = rng.poisson(p["lam"] * dt, steps)
        return rng.gamma(counts, p["mean_jump"])
    if spec.kind == "noisy":
        return (p["base_rate"] + rng.uniform(-p["noise"], p["noise"], steps)) * dt
    return _onoff_increments(p, steps, dt, rng)


def _onoff_increments(p, steps, dt, rng):
    # sojourns are geometric, so draw them in bulk instead of stepping the chain
    a, b = p["p_off_on"], p["p_on_off"]
    start = p["start"]
    on = bool(rng.random() < a / (a + b)) if start == "stationary" else start == "on"
    pieces, total = [], 0
    while total < steps:
        n = int(steps * min(a, b)) + 8
        lengths = np.empty(2 * n, dtype=np.int64)
        lengths[0::2] = rng.geometric(b if on else a, n)
        lengths[1::2] = rng.geometric(a if on else b, n)
        flags = np.tile([on, not on], n)
        pieces.append(np.repeat(flags, lengths))
        total += int(lengths.sum())
    states = np.concatenate(pieces)[:steps]
    return np.where(states, p["on_rate"] * dt, 0.0)


@dataclass(frozen=True, eq=False)
class Trace:
    """Cumulative process sampled every ``step``; starts at 0 and never decreases."""

    step: float
    values: np.ndarray
    role: str = ""

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or v.size == 0:
            raise ValueError("trace values must be a non-empty 1-d sequence")
        if abs(v[0]) > _TOL or np.any(np.diff(v) < -_TOL * max(1.0, float(np.max(np.abs(v))))):
            raise ValueError(f"{self.role or 'trace'} must start at 0 and be non-decreasing")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_increments(cls, increments, step: float, role: str = "") -> "Trace":
        return cls(step, np.concatenate([[0.0], np.cumsum(increments)]), role)

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.values.size) * self.step

    def __len__(self):
        return self.values.size


def generate_trace(spec: GeneratorSpec, horizon: float, seed: int | None = None,
                   step: float = DEFAULT_SIM_STEP, role: str = "") -> Trace:
    """One realisation on ``[0, horizon]``; ``seed`` overrides ``spec.seed``."""
    steps = int(math.floor(horizon / step + 1e-9))
    rng = replication_rng(spec.seed if seed is None else seed, 0)
    return Trace.from_increments(draw_increments(spec, steps, step, rng), step, role)


# -- server dynamics ----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class NodeTrace:
    arrival: Trace
    departure: Trace
    charged: Trace
    consumed: Trace
    energy: np.ndarray
    backlog: np.ndarray
    delays: np.ndarray


def _rate_map(fn, increments: np.ndarray, dt: float) -> np.ndarray:
    # per-step amounts through a rate function: fn(amount / dt) * dt
    return np.asarray(fn(np.maximum(increments, 0.0) / dt)) * dt


def _backlog(d_arr: np.ndarray, d_srv: np.ndarray) -> np.ndarray:
    # B(k) = max_j [A(j,k) - S(j,k)] by its recursion; the closed form
    # S + cummin(A - S) loses precision when S dwarfs A
    out = np.zeros(d_arr.shape[:-1] + (d_arr.shape[-1] + 1,))
    for k in range(d_arr.shape[-1]):
        out[..., k + 1] = np.maximum(out[..., k] + d_arr[..., k] - d_srv[..., k], 0.0)
    return out


def serve(arrivals: np.ndarray, charged: np.ndarray, schedule: np.ndarray, p: PowerRate,
          dt: float, consumption: str = "delivered"):
    """Energy-limited FIFO server on cumulative arrays (last axis is time).

    The server can deliver ``min(S, S_C)`` where ``S`` is the energy-oblivious
    schedule and ``S_C`` the service the harvested energy pays for.  Returns
    ``(departures, consumed, effective_service)``.
    """
    s_c = np.concatenate(
        [np.zeros(charged.shape[:-1] + (1,)), np.cumsum(_rate_map(p.inverse, np.diff(charged, axis=-1), dt), axis=-1)],
        axis=-1,
    )
    s_e = np.minimum(schedule, s_c)
    departures = arrivals - _backlog(np.diff(arrivals, axis=-1), np.diff(s_e, axis=-1))
    if consumption == "delivered":
        used = departures
    elif consumption == "schedule":
        used = s_e
    else:
        raise ValueError(f"unknown consumption mode {consumption!r}")
    inc = _rate_map(p.forward, np.diff(used, axis=-1), dt)
    consumed = np.concatenate([np.zeros(used.shape[:-1] + (1,)), np.cumsum(inc, axis=-1)], axis=-1)
    return departures, consumed, s_e


def virtual_delay(arrivals: np.ndarray, departures: np.ndarray, dt: float, indices) -> np.ndarray:
    """``inf{tau >= 0 : A(t) <= A*(t + tau)}`` at the given step indices.

    Linear interpolation between steps; ``inf`` when the level is never reached.
    Accepts single traces or ``(replications, steps)`` arrays.
    """
    a = np.atleast_2d(arrivals)
    d = np.atleast_2d(departures)
    idx = np.asarray(list(indices), dtype=int)
    n = d.shape[1]
    out = np.empty((a.shape[0], idx.size))
    for r in range(a.shape[0]):
        level = a[r, idx] - _TOL * np.maximum(1.0, np.abs(a[r, idx]))
        j = np.maximum(np.searchsorted(d[r], level, side="left"), idx)
        jj = np.minimum(j, n - 1)
        lo, hi = d[r, np.maximum(jj - 1, 0)], d[r, jj]
        gap = np.where(hi > lo, hi - lo, 1.0)
        frac = np.clip((level - lo) / gap, 0.0, 1.0)
        t_cross = np.where(jj > idx, (jj - 1 + frac) * dt, jj * dt)
        out[r] = np.where(j < n, t_cross - idx * dt, np.inf)
    return out


def run_node(arrival: Trace, charging: Trace, schedule: PiecewiseFn, p: PowerRate,
             consumption: str = "delivered") -> NodeTrace:
    """Feed one arrival realisation through an energy-limited server."""
    if not math.isclose(arrival.step, charging.step) or len(arrival) != len(charging):
        raise StepMismatch("arrival and charging traces must share step and length")
    dt = arrival.step
    s = np.asarray(schedule(arrival.times))
    dep, used, _ = serve(arrival.values, charging.values, s, p, dt, consumption)
    delays = virtual_delay(arrival.values, dep, dt, range(len(arrival)))[0]
    return NodeTrace(
        arrival,
        Trace(dt, dep, "departure"),
        charging,
        Trace(dt, used, "consumed"),
        charging.values - used,
        arrival.values - dep,
        delays,
    )


@dataclass(frozen=True, eq=False)
class NodeConfig:
    charging: GeneratorSpec
    schedule: PiecewiseFn
    power: PowerRate = field(default_factory=PowerRate.identity)
    consumption: str = "delivered"


def run_tandem(nodes: Sequence[NodeConfig], flow: GeneratorSpec, replications: int, seed: int,
               horizon: float, step: float = DEFAULT_SIM_STEP) -> list[list[NodeTrace]]:
    """Replications of a flow crossing ``nodes`` in order; node ``i`` feeds node ``i + 1``."""
    if not nodes:
        raise ValueError("at least one node is required")
    steps = int(math.floor(horizon / step + 1e-9))
    chains = []
    for rep in range(replications):
        arrival = Trace.from_increments(draw_increments(flow, steps, step, replication_rng(seed, rep, 0)), step, "arrival")
        chain = []
        for i, node in enumerate(nodes):
            rng = replication_rng(seed, rep, i + 1)
            charging = Trace.from_increments(draw_increments(node.charging, steps, step, rng), step, "charging")
            nt = run_node(arrival, charging, node.schedule, node.power, node.consumption)
            chain.append(nt)
            arrival = nt.departure
        chains.append(chain)
    return chains


def empirical_ccdf(samples, grid) -> tuple[np.ndarray, np.ndarray]:
    """Fraction of samples strictly above each ``x`` and its binomial standard error."""
    s = np.asarray(samples, dtype=float).ravel()
    if s.size == 0:
        raise EmptySamples("no samples to estimate a CCDF from")
    xs = np.asarray(grid, dtype=float)
    srt = np.sort(s)
    prob = (s.size - np.searchsorted(srt, xs, side="right")) / s.size
    return prob, np.sqrt(prob * (1 - prob) / s.size)


# -- envelopes for the built-in generators -------------------------------------


def cpoisson_upper_envelope(lam: float, mean_jump: float, rho: float) -> tuple[float, float]:
    """``(K, theta)`` with ``Prob{sup_s C(s,t) - rho (t-s) > x} <= K exp(-theta x)``.

    Exact ruin probability for exponential jumps; needs ``rho > lam * mean_jump``.
    """
    if rho <= lam * mean_jump:
        raise InvalidSpec("envelope rate must exceed the mean rate")
    return lam * mean_jump / rho, 1.0 / mean_jump - lam / rho


def onoff_upper_envelope(on_rate: float, p_on_off: float, p_off_on: float, rho: float,
                         dt: float = DEFAULT_SIM_STEP) -> tuple[float, float]:
    """``(K, theta)`` for a stationary on-off source, from an exponential martingale.

    ``theta`` makes the tilted transition matrix have spectral radius one; ``K``
    is the stationary mean of its right eigenvector over the eigenvector's minimum.
    """
    mean = on_rate * p_off_on / (p_on_off + p_off_on)
    if not mean < rho < on_rate:
        raise InvalidSpec("envelope rate must lie strictly between the mean and the peak rate")
    trans = np.array([[1 - p_off_on, p_off_on], [p_on_off, 1 - p_on_off]])

    def radius(theta):
        tilt = np.diag(np.exp(theta * (np.array([0.0, on_rate]) - rho) * dt))
        return float(np.max(np.abs(np.linalg.eigvals(tilt @ trans))))

    lo, hi = 0.0, 1.0
    while radius(hi) < 1:
        hi *= 2
    for _ in range(200):
        mid = (lo + hi) / 2
        if radius(mid) < 1:
            lo = mid
        else:
            hi = mid
    theta = hi
    tilt = np.diag(np.exp(theta * (np.array([0.0, on_rate]) - rho) * dt))
    vals, vecs = np.linalg.eig(tilt @ trans)
    h = np.abs(np.real(vecs[:, np.argmax(np.real(vals))]))
    pi = np.array([p_on_off, p_off_on]) / (p_on_off + p_off_on)
    return float(pi @ h / h.min()), float(theta)
