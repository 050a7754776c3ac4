import math

import numpy as np
import pytest

from energync.curves import affine
from energync.energy import PowerRate
from energync.errors import EmptySamples, InvalidSpec, StepMismatch
from energync.sim import (
    GeneratorSpec,
    NodeConfig,
    Trace,
    cpoisson_upper_envelope,
    draw_increments,
    empirical_ccdf,
    generate_trace,
    onoff_upper_envelope,
    replication_rng,
    run_node,
    run_tandem,
    virtual_delay,
)

ID = PowerRate.identity()


class TestGenerators:
    def test_constant(self):
        tr = generate_trace(GeneratorSpec("constant", {"rate": 2.0}), 10.0)
        assert np.allclose(tr.values, 2 * tr.times)
        assert tr.times[-1] == pytest.approx(10.0)

    @pytest.mark.parametrize("kind,params", [
        ("onoff", {"on_rate": 3.0, "p_on_off": 0.1, "p_off_on": 0.05}),
        ("cpoisson", {"lam": 2.0, "mean_jump": 1.0}),
        ("noisy", {"base_rate": 1.0, "noise": 0.5}),
    ])
    def test_seeded_reproducible(self, kind, params):
        spec = GeneratorSpec(kind, params, seed=11)
        assert np.array_equal(generate_trace(spec, 5.0).values, generate_trace(spec, 5.0).values)
        assert not np.array_equal(generate_trace(spec, 5.0).values, generate_trace(spec, 5.0, seed=12).values)

    def test_onoff_mean(self):
        spec = GeneratorSpec("onoff", {"on_rate": 2.0, "p_on_off": 0.2, "p_off_on": 0.1})
        inc = draw_increments(spec, 100_000, 0.01, replication_rng(3, 0))
        # batch means absorb the Markov correlation
        batches = inc.reshape(100, -1).mean(axis=1) / 0.01
        se = batches.std(ddof=1) / math.sqrt(batches.size)
        assert abs(batches.mean() - spec.mean_rate) < 3 * se
        assert spec.mean_rate == pytest.approx(2.0 / 3.0)

    def test_cpoisson_mean(self):
        spec = GeneratorSpec("cpoisson", {"lam": 2.0, "mean_jump": 0.5})
        inc = draw_increments(spec, 200_000, 0.01, replication_rng(4, 0)) / 0.01
        assert abs(inc.mean() - 1.0) < 3 * inc.std() / math.sqrt(inc.size)

    @pytest.mark.parametrize("kind,params", [
        ("bogus", {}),
        ("constant", {}),
        ("constant", {"rate": -1.0}),
        ("onoff", {"on_rate": 1.0, "p_on_off": 0.0, "p_off_on": 0.5}),
        ("noisy", {"base_rate": 1.0, "noise": 2.0}),
        ("cpoisson", {"lam": 1.0, "mean_jump": 1.0, "extra": 2.0}),
    ])
    def test_invalid(self, kind, params):
        with pytest.raises(InvalidSpec):
            GeneratorSpec(kind, params)


class TestTrace:
    def test_must_start_at_zero_and_increase(self):
        with pytest.raises(ValueError):
            Trace(0.1, [1.0, 2.0])
        with pytest.raises(ValueError):
            Trace(0.1, [0.0, 2.0, 1.0])


def _const(rate, horizon=10.0):
    return generate_trace(GeneratorSpec("constant", {"rate": rate}), horizon)


class TestRunNode:
    def test_abundant_energy(self):
        arr = generate_trace(GeneratorSpec("cpoisson", {"lam": 1.0, "mean_jump": 0.2}), 10.0, seed=1)
        nt = run_node(arr, _const(100.0), affine(1e3, 0.0), ID)
        assert np.allclose(nt.departure.values, arr.values)
        assert np.allclose(nt.backlog, 0.0)
        assert np.allclose(nt.delays, 0.0)

    def test_no_energy(self):
        arr = _const(1.0)
        nt = run_node(arr, _const(0.0), affine(5.0, 0.0), ID)
        assert np.all(nt.departure.values == 0.0)
        assert np.all(nt.energy == 0.0)
        assert np.array_equal(nt.backlog, arr.values)
        assert np.isinf(nt.delays[-1])

    def test_energy_limits_throughput(self):
        horizon = 1000.0  # 10^5 steps
        nt = run_node(_const(2.0, horizon), _const(1.5, horizon), affine(5.0, 0.0), ID)
        rate = nt.departure.values[-1] / horizon
        assert rate == pytest.approx(1.5, rel=0.01)

    def test_causality_and_conservation(self):
        arr = generate_trace(GeneratorSpec("cpoisson", {"lam": 3.0, "mean_jump": 0.3}), 20.0, seed=5)
        chg = generate_trace(GeneratorSpec("onoff", {"on_rate": 3.0, "p_on_off": 0.05, "p_off_on": 0.05}), 20.0, seed=6)
        p = PowerRate.linear(1.5)
        nt = run_node(arr, chg, affine(1.2, 0.0), p)
        assert np.all(nt.departure.values <= arr.values + 1e-12)
        assert np.all(nt.consumed.values <= chg.values + 1e-9)
        assert np.all(nt.energy >= -1e-9)
        delivered = np.diff(nt.departure.values)
        assert np.allclose(np.diff(nt.consumed.values), p.forward(delivered / 0.01) * 0.01)

    def test_step_mismatch(self):
        with pytest.raises(StepMismatch):
            run_node(_const(1.0, 5.0), _const(1.0, 6.0), affine(1.0, 0.0), ID)

    def test_schedule_consumption(self):
        nt = run_node(_const(0.5), _const(1.0), affine(2.0, 0.0), ID, consumption="schedule")
        assert np.allclose(nt.consumed.values, nt.charged.values)
        assert np.allclose(nt.energy, 0.0)


class TestVirtualDelay:
    def test_constant_rates(self):
        # A(t) = t + 1 (burst at first step), served at rate 2 -> delay of bits at t: (1 - t) / 2 while backlogged
        dt = 0.01
        t = np.arange(501) * dt
        a = np.minimum(t * 100, 1.0) + t
        d = np.minimum(2 * t, a)
        delays = virtual_delay(a, d, dt, [1, 50, 100, 400])[0]
        expected = np.maximum((a[[1, 50, 100, 400]] - 2 * t[[1, 50, 100, 400]]) / 2, 0)
        assert np.allclose(delays, expected, atol=1e-9)

    def test_censored(self):
        a = np.array([0.0, 1.0, 2.0])
        d = np.array([0.0, 0.5, 0.6])
        assert np.isinf(virtual_delay(a, d, 1.0, [2])[0, 0])


class TestTandem:
    def _flow(self):
        return GeneratorSpec("cpoisson", {"lam": 2.0, "mean_jump": 0.25})

    def test_single_node_is_run_node(self):
        node = NodeConfig(GeneratorSpec("constant", {"rate": 1.0}), affine(1.5, 0.0))
        chain = run_tandem([node], self._flow(), 1, seed=9, horizon=10.0)[0]
        arr = Trace.from_increments(draw_increments(self._flow(), 1000, 0.01, replication_rng(9, 0, 0)), 0.01)
        chg = Trace.from_increments(draw_increments(node.charging, 1000, 0.01, replication_rng(9, 0, 1)), 0.01)
        ref = run_node(arr, chg, node.schedule, node.power)
        assert np.array_equal(chain[0].departure.values, ref.departure.values)

    def test_transparent_second_hop(self):
        first = NodeConfig(GeneratorSpec("onoff", {"on_rate": 2.0, "p_on_off": 0.1, "p_off_on": 0.1}), affine(1.5, 0.0))
        second = NodeConfig(GeneratorSpec("constant", {"rate": 1e6}), affine(1e6, 0.0))
        for a, b in run_tandem([first, second], self._flow(), 3, seed=2, horizon=10.0):
            assert np.array_equal(b.departure.values, a.departure.values)
            e2e = virtual_delay(a.arrival.values, b.departure.values, 0.01, range(0, 1001, 50))
            assert np.array_equal(e2e[0], a.delays[::50])


class TestEmpiricalCcdf:
    def test_examples(self):
        p, _ = empirical_ccdf([1, 2, 3], [1.5])
        assert p[0] == pytest.approx(2 / 3)
        p, se = empirical_ccdf([0, 0, 0], [0.1, 1.0])
        assert np.all(p == 0) and np.all(se == 0)

    def test_empty(self):
        with pytest.raises(EmptySamples):
            empirical_ccdf([], [0.0])

    def test_exponential(self):
        s = np.random.default_rng(1).exponential(1.0, 100_000)
        xs = np.linspace(0, 5, 51)
        p, se = empirical_ccdf(s, xs)
        assert np.all(np.abs(p - np.exp(-xs)) <= 3 * np.maximum(se, 1e-5))


def _sup_excess(increments, rho, dt):
    # sup over s of C(s, t) - rho (t - s) at the final time, via the reversed walk
    walk = np.cumsum((increments[..., ::-1] - rho * dt), axis=-1)
    return np.maximum(walk.max(axis=-1), 0.0)


class TestEnvelopes:
    def test_cpoisson_formula(self):
        assert cpoisson_upper_envelope(2.0, 1.0, 3.0) == pytest.approx((2 / 3, 1 / 3))

    @pytest.mark.parametrize("kind,params,rho", [
        ("cpoisson", {"lam": 2.0, "mean_jump": 0.5}, 1.5),
        ("onoff", {"on_rate": 3.0, "p_on_off": 0.05, "p_off_on": 0.05}, 2.0),
    ])
    def test_envelope_holds(self, kind, params, rho):
        spec = GeneratorSpec(kind, params)
        if kind == "cpoisson":
            k, theta = cpoisson_upper_envelope(params["lam"], params["mean_jump"], rho)
        else:
            k, theta = onoff_upper_envelope(params["on_rate"], params["p_on_off"], params["p_off_on"], rho)
        sups = np.array([_sup_excess(draw_increments(spec, 2000, 0.01, replication_rng(8, i)), rho, 0.01)
                         for i in range(3000)])
        xs = np.linspace(0, 4, 21)
        p, se = empirical_ccdf(sups, xs)
        assert np.all(p <= np.minimum(k * np.exp(-theta * xs), 1) + 3 * se + 1e-9)
