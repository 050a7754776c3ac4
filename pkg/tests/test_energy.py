import math
import random

import numpy as np
import pytest

from energync.curves import (
    Grid,
    affine,
    clamp_one,
    clamp_plus,
    exponential,
    max_plus_convolve,
    min_plus_convolve,
    pwl,
    zero,
)
from energync.energy import (
    PowerRate,
    SecModel,
    SedModel,
    combine_sources,
    combine_sources_independent,
    energy_outage_bound,
    energy_outage_curve,
    energy_to_service_curve,
    residual_energy_bounds,
    service_to_energy_curve,
)
from energync.errors import ClassViolation, DivergentDeconvolution, NonInvertiblePower
from energync.service import ServiceModel

from oracles import brute_max_plus, random_pwl, tabulate

G = Grid(0.01, 10.0)
FINE = Grid(1e-3, 12.0)
XS = np.linspace(0.0, 5.0, 101)


class TestPowerRate:
    def test_closed_forms(self):
        assert PowerRate.identity().forward(3.0) == 3.0
        assert PowerRate.linear(2.0).inverse(5.0) == 2.5
        assert PowerRate.quadratic().inverse(4.0) == 2.0
        assert PowerRate.quadratic(3.0).forward(2.0) == 12.0

    def test_table_generalised_inverse_over_flat_segment(self):
        p = PowerRate.from_table([(0, 0), (1, 2), (2, 2), (3, 5)])
        assert p.inverse(2.0) == pytest.approx(1.0)
        assert p.inverse(3.5) == pytest.approx(2.5)
        assert p.forward(4.0) == pytest.approx(8.0)

    @pytest.mark.parametrize("p", [PowerRate.identity(), PowerRate.linear(0.7), PowerRate.quadratic(2.0),
                                   PowerRate.from_table([(0, 0), (1, 0.5), (2, 3)])])
    def test_inverse_of_forward(self, p):
        r = np.linspace(0, 6, 61)
        assert np.allclose(p.inverse(p.forward(r)), r, atol=1e-9)

    def test_table_out_of_range(self):
        p = PowerRate.from_table([(0, 0), (1, 1), (2, 1)])
        with pytest.raises(NonInvertiblePower):
            p.inverse(1.5)

    @pytest.mark.parametrize("table", [[(0, 0)], [(0, 1), (1, 2)], [(0, 0), (1, 2), (2, 1)]])
    def test_bad_tables(self, table):
        with pytest.raises(ValueError):
            PowerRate.from_table(table)

    def test_bursts(self):
        assert PowerRate.linear(2.0).burst_service(3.0) == 1.5
        assert PowerRate.quadratic().burst_service(3.0) == 0.0
        with pytest.raises(NonInvertiblePower):
            PowerRate.quadratic().burst_energy(1.0)


class TestCurveTranslation:
    def test_identity(self):
        c = affine(1.5, 0.0, G)
        s = energy_to_service_curve(c, PowerRate.identity())
        assert np.allclose(s(XS), 1.5 * XS)

    def test_quadratic_constant_rate(self):
        s = energy_to_service_curve(affine(4.0, 0.0, G), PowerRate.quadratic())
        assert np.allclose(s(XS), 2 * XS)
        assert s.terminal_slope == pytest.approx(2.0)

    def test_quadratic_piecewise(self):
        c = pwl([(0, 0), (1, 4)], terminal_slope=1.0)
        s = energy_to_service_curve(c, PowerRate.quadratic())
        expected = np.where(XS <= 1, 2 * XS, 2 + (XS - 1))
        assert np.allclose(s(XS), expected)

    def test_service_to_energy(self):
        s = affine(2.0, 0.0, G)
        assert np.allclose(service_to_energy_curve(s, PowerRate.identity())(XS), 2 * XS)
        assert np.allclose(service_to_energy_curve(s, PowerRate.quadratic())(XS), 4 * XS)

    def test_energy_burst_converts_through_tail_ratio(self):
        s = energy_to_service_curve(affine(1.0, 3.0, G), PowerRate.linear(2.0))
        assert s(0.0) == pytest.approx(1.5)
        with pytest.raises(NonInvertiblePower):
            service_to_energy_curve(affine(1.0, 1.0, G), PowerRate.quadratic())

    @pytest.mark.parametrize("seed", range(8))
    def test_round_trip(self, seed):
        rng = random.Random(seed)
        s = random_pwl(rng, 5.0, 0.01, 40, (0.0, 3.0), "up")
        s = s - float(s.v[0])  # no burst, so the quadratic case is defined
        for p in (PowerRate.quadratic(1.3), PowerRate.from_table([(0, 0), (1, 0.5), (2, 3)])):
            back = energy_to_service_curve(service_to_energy_curve(s, p), p)
            xs = np.linspace(0, 8, 161)
            assert np.allclose(back(xs), s(xs), atol=1e-9)
            assert np.all(np.diff(back.v) >= -1e-12)


class TestModels:
    def test_sec_ordering_enforced(self):
        with pytest.raises(ClassViolation):
            SecModel(affine(2.0, 0.0, G), zero(), affine(1.0, 0.0, G), zero())

    def test_sed_ordering_enforced(self):
        with pytest.raises(ClassViolation):
            SedModel(affine(1.0, 0.0, G), zero(), affine(2.0, 0.0, G), zero())


class TestResidualEnergy:
    def test_deterministic_upper_is_zero(self):
        a = affine(1.0, 0.0, G)
        pair = residual_energy_bounds(SecModel(a, zero(), a, zero()), SedModel(a, zero(), a, zero()))
        assert np.all(pair.upper(XS[1:]) == 0.0)
        assert pair.upper(-0.5) == 1.0

    def test_exponential_lower(self):
        a = affine(1.0, 0.0, G)
        e = exponential(1.0, 2.0, G)
        pair = residual_energy_bounds(SecModel(a, e, a, e), SedModel(a, e, a, e))
        n = 201
        brute = np.array(brute_max_plus(tabulate(e, 0.01, n), tabulate(e, 0.01, n)))
        xs = np.arange(n) * 0.01
        assert np.allclose(pair.lower(xs), np.maximum(brute - 1, 0), atol=1e-12)
        assert np.allclose(pair.lower(xs), np.exp(-2 * xs), atol=1e-12)

    def test_pair_ordered_and_monotone(self):
        sec = SecModel(affine(0.8, 0.0, G), exponential(0.5, 2.0, G), affine(1.2, 0.5, G), exponential(1.0, 1.0, G))
        sed = SedModel(affine(1.3, 0.2, G), exponential(0.8, 1.5, G), affine(1.2, 0.0, G), exponential(1.0, 0.5, G))
        pair = residual_energy_bounds(sec, sed)
        xs = np.linspace(-1, 9, 501)
        lo, hi = pair.lower(xs), pair.upper(xs)
        assert np.all(0 <= lo) and np.all(lo <= hi) and np.all(hi <= 1)
        assert np.all(np.diff(lo) <= 1e-12) and np.all(np.diff(hi) <= 1e-12)

    def test_divergent_shift(self):
        sec = SecModel.upper_only(affine(2.0, 0.0, G), zero())
        sed = SedModel(affine(1.0, 0.0, G), zero(), affine(1.0, 0.0, G), zero())
        with pytest.raises(DivergentDeconvolution):
            residual_energy_bounds(sec, sed)


def _pair_sources():
    e2, e1 = exponential(1.0, 2.0, FINE), exponential(1.0, 1.0, FINE)
    src = SecModel(zero(), e2, zero(), e1)
    return src, combine_sources([src, src]), combine_sources_independent([src, src])


class TestMultiSource:
    def test_single_source_unchanged(self):
        src = SecModel(zero(), exponential(1, 2, G), affine(1, 0, G), exponential(1, 1, G))
        assert combine_sources([src]) is src
        assert combine_sources_independent([src]) is src

    def test_curves_add(self):
        a = SecModel.upper_only(affine(1.0, 0.5, G), zero())
        b = SecModel.upper_only(affine(2.0, 0.0, G), zero())
        merged = combine_sources([a, b])
        assert np.allclose(merged.alpha2(XS), 3 * XS + 0.5)

    def test_worked_example_values(self):
        _, dep, ind = _pair_sources()
        assert np.max(np.abs(dep.f1(XS) - np.exp(-2 * XS))) < 1e-3
        assert np.max(np.abs(dep.f2(XS) - 2 * np.exp(-XS / 2))) < 1e-3
        assert np.max(np.abs(ind.f1(XS) - (1 + 2 * XS) * np.exp(-2 * XS))) < 1e-3
        assert np.max(np.abs(ind.f2(XS) - (1 + XS) * np.exp(-XS))) < 1e-3

    def test_independence_tightens(self):
        _, dep, ind = _pair_sources()
        xs = np.linspace(0, 10, 1001)
        assert np.all(clamp_one(ind.f2(xs)) <= clamp_one(dep.f2(xs)) + 1e-9)
        assert np.all(clamp_plus(ind.f1(xs)) >= clamp_plus(dep.f1(xs)) - 1e-9)


class TestOutage:
    @pytest.mark.parametrize("rho,sigma", [(1.0, 1.0), (2.0, 0.5), (0.5, 3.0)])
    def test_threshold_at_burst(self, rho, sigma):
        grid = Grid(1e-3, 20.0)
        tail = exponential(math.exp(-2), 1.0, grid)
        sec = SecModel.upper_only(affine(rho, sigma, grid), tail)
        svc = ServiceModel(affine(rho, 0.0, grid), tail, "ssc")
        assert energy_outage_bound(sec, svc, PowerRate.identity(), sigma) == pytest.approx(1 - 2 * math.exp(-2), abs=5e-4)

    def test_below_shift_is_zero(self):
        sec = SecModel.upper_only(affine(1.0, 2.0, G), exponential(0.3, 1.0, G))
        svc = ServiceModel(affine(1.0, 0.0, G), exponential(0.3, 1.0, G), "ssc")
        assert energy_outage_bound(sec, svc, PowerRate.identity(), 1.0) == 0.0

    def test_deterministic_is_certain(self):
        sec = SecModel.upper_only(affine(1.0, 2.0, G), zero())
        svc = ServiceModel(affine(1.0, 0.0, G), zero(), "ssc")
        assert energy_outage_bound(sec, svc, PowerRate.identity(), 2.5) == 1.0

    def test_curve_matches_scalar_and_is_monotone(self):
        sec = SecModel.upper_only(affine(1.0, 1.0, G), exponential(0.5, 1.0, G))
        svc = ServiceModel(affine(1.0, 0.0, G), exponential(0.5, 2.0, G), "ssc")
        xs = np.linspace(0, 6, 31)
        curve = energy_outage_curve(sec, svc, PowerRate.identity(), xs)
        assert np.all(np.diff(curve) >= -1e-12)
        for i in (0, 10, 30):
            assert curve[i] == pytest.approx(energy_outage_bound(sec, svc, PowerRate.identity(), xs[i]))

    def test_requires_strict_service(self):
        sec = SecModel.upper_only(affine(1.0, 1.0, G), zero())
        with pytest.raises(ValueError):
            energy_outage_bound(sec, ServiceModel(affine(1.0, 0.0, G), zero(), "sc"), PowerRate.identity(), 1.0)


# Sum-of-two-variables bounds must hold however the variables are coupled.
def _coupled(coupling, n, rng):
    u = rng.random(n)
    v = rng.random(n) if coupling == "independent" else (u if coupling == "comonotone" else 1 - u)
    return u, v


@pytest.mark.parametrize("coupling", ["independent", "comonotone", "antithetic"])
@pytest.mark.parametrize("rates", [(2.0, 1.0), (1.0, 0.5)])
def test_sum_bounds_hold_for_any_coupling(coupling, rates):
    rng = np.random.default_rng(7)
    n = 100_000
    u, v = _coupled(coupling, n, rng)
    a, b = rates
    total = -np.log1p(-u) / a - np.log1p(-v) / b
    grid = Grid(0.01, 15.0)
    # exact tails for f2/g2, tails scaled below them for f1/g1
    f1, f2 = exponential(0.9, a, grid), exponential(1.0, a, grid)
    g1, g2 = exponential(0.8, b, grid), exponential(1.0, b, grid)
    upper = min_plus_convolve(f2, g2)
    lower = max_plus_convolve(f1, g1)
    xs = np.linspace(0, 10, 101)
    emp = (total[None, :] > xs[:, None]).mean(axis=1)
    noise = 3 * np.sqrt(np.maximum(emp * (1 - emp), 1 / n) / n)
    assert np.all(emp <= clamp_one(upper(xs)) + noise)
    assert np.all(emp >= clamp_plus(lower(xs) - 1) - noise)
