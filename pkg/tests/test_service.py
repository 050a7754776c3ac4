import math

import numpy as np
import pytest

from energync.curves import Grid, affine, exponential, rate_latency, zero
from energync.energy import PowerRate, SecModel, energy_to_service_curve
from energync.errors import DivergentDeconvolution, UnboundedDistance
from energync.service import (
    ArrivalModel,
    ServiceModel,
    backlog_bound,
    backlog_curve,
    concatenate,
    delay_bound,
    delay_curve,
    effective_service,
)

from oracles import brute_horizontal_distance, brute_min_plus, tabulate

G = Grid(0.01, 10.0)
XS = np.linspace(0.0, 8.0, 161)
ID = PowerRate.identity()


def _sec(rho, sigma=0.0, f2=None):
    return SecModel.upper_only(affine(rho, sigma, G), f2 if f2 is not None else zero())


class TestEffectiveService:
    @pytest.mark.parametrize("R,rho", [(2.0, 1.0), (1.0, 3.0)])
    def test_linear_min(self, R, rho):
        eff = effective_service(ServiceModel(affine(R, 0, G), zero()), _sec(rho), ID)
        assert np.allclose(eff.beta(XS), min(R, rho) * XS)
        assert eff.kind == "sc"

    def test_bounding_function(self):
        tail = exponential(math.exp(-2), 1.0, G)
        eff = effective_service(ServiceModel(affine(1, 0, G), tail), _sec(2.0, f2=tail), ID)
        n = 301
        brute = brute_min_plus(tabulate(tail, 0.01, n), tabulate(tail, 0.01, n))
        xs = np.arange(n) * 0.01
        assert np.allclose(eff.g(xs), brute, atol=1e-12)
        assert np.allclose(eff.g(xs), 2 * np.exp(-(xs / 2 + 2)), atol=1e-4)

    def test_abundant_energy_is_inactive(self):
        svc = ServiceModel(affine(1.0, 0, G), exponential(0.5, 1.0, G))
        eff = effective_service(svc, _sec(1.5, 1.0), ID)
        assert np.allclose(eff.beta(XS), svc.beta(XS))
        assert np.allclose(eff.g(XS), svc.g(XS))

    def test_never_exceeds_constraints(self):
        svc = ServiceModel(affine(2.0, 0, G), zero())
        sec = SecModel.upper_only(affine(1.0, 3.0, G), zero())
        p = PowerRate.quadratic(0.5)
        eff = effective_service(svc, sec, p)
        cap = energy_to_service_curve(sec.alpha2, p)
        assert np.all(eff.beta(XS) <= svc.beta(XS) + 1e-12)
        assert np.all(eff.beta(XS) <= cap(XS) + 1e-12)


class TestDelay:
    def test_deterministic(self):
        res = delay_bound(ArrivalModel(affine(1.0, 2.0, G), zero()), ServiceModel(affine(4.0, 0, G), zero()), 0.0)
        assert res.delay == pytest.approx(0.5)
        assert res.violation_prob == 0.0

    def test_shifted_arrival_oracle(self):
        arr = ArrivalModel(affine(1.0, 1.0, G), zero())
        eff = ServiceModel(affine(2.0, 0, G), zero())
        res = delay_bound(arr, eff, 1.0)
        brute = brute_horizontal_distance(arr.alpha + 1.0, eff.beta, np.arange(0, 10, 0.05), 1e-3, 50)
        assert res.delay == pytest.approx(1.0)
        assert res.delay == pytest.approx(brute, abs=1e-3)

    def test_unstable(self):
        with pytest.raises(UnboundedDistance):
            delay_bound(ArrivalModel(affine(2.0, 0, G), zero()), ServiceModel(affine(1.0, 0, G), zero()), 0.0)

    def test_probability_monotone(self):
        arr = ArrivalModel(affine(1.0, 1.0, G), exponential(0.6, 1.0, G))
        eff = ServiceModel(affine(2.0, 0, G), exponential(0.4, 0.5, G))
        delays, probs = delay_curve(arr, eff, XS[::8])
        assert np.all(np.diff(probs) <= 1e-12)
        assert np.all(np.diff(delays) >= -1e-9)


class TestBacklog:
    def test_deterministic(self):
        arr = ArrivalModel(affine(1.0, 2.0, G), zero())
        eff = ServiceModel(affine(3.0, 0, G), zero())
        assert backlog_bound(arr, eff, 2.5) == 0.0
        assert backlog_bound(arr, eff, 1.0) == 1.0

    def test_monotone(self):
        arr = ArrivalModel(affine(1.0, 1.0, G), exponential(0.6, 1.0, G))
        eff = ServiceModel(affine(2.0, 0, G), exponential(0.4, 0.5, G))
        probs = backlog_curve(arr, eff, XS)
        assert np.all(np.diff(probs) <= 1e-12)
        assert probs[-1] < 0.1

    def test_unstable(self):
        with pytest.raises(DivergentDeconvolution):
            backlog_bound(ArrivalModel(affine(2.0, 0, G), zero()), ServiceModel(affine(1.0, 0, G), zero()), 1.0)


class TestConcatenate:
    def test_single_node(self):
        node = (ServiceModel(affine(2.0, 0, G), exponential(0.5, 1.0, G)), _sec(1.0, 0.0, exponential(0.2, 1.0, G)), ID)
        net, eff = concatenate([node]), effective_service(*node)
        assert np.allclose(net.beta(XS), eff.beta(XS))
        assert np.allclose(net.g(XS), eff.g(XS))

    def test_linear_nodes(self):
        nodes = [(ServiceModel(affine(R, 0, G), zero()), _sec(5.0), ID) for R in (2.0, 3.0)]
        assert np.allclose(concatenate(nodes).beta(XS), 2.0 * XS)

    def test_exponential_tails(self):
        e = exponential(1.0, 1.0, Grid(1e-3, 12.0))
        nodes = [(ServiceModel(affine(2.0, 0, G), e), _sec(5.0), ID) for _ in range(2)]
        g = concatenate(nodes).g
        xs = np.linspace(0, 5, 51)
        assert np.max(np.abs(g(xs) - 2 * np.exp(-xs / 2))) < 1e-3

    def test_rate_latency_composition(self):
        nodes = [(ServiceModel(rate_latency(R, T, G), zero()), _sec(10.0), ID) for R, T in ((2.0, 0.5), (3.0, 1.0))]
        net = concatenate(nodes).beta
        assert np.allclose(net(XS), 2.0 * np.maximum(XS - 1.5, 0), atol=1e-9)
        res = delay_bound(ArrivalModel(affine(1.0, 1.0, G), zero()), concatenate(nodes), 0.0)
        assert res.delay == pytest.approx(1.5 + 0.5, abs=1e-6)
