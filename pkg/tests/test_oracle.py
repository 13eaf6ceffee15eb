import math
import time

import numpy as np
import pytest

from conftest import square_config
from wsn_deploy.field import build_grid, neighbors, weighted_voronoi_assign
from wsn_deploy.model import derive_coefficients
from wsn_deploy.optimizer import OptimizerState, initial_state
from wsn_deploy.oracle import (
    OracleReport,
    alpha_distance,
    boundary_oracle_scan,
    e1_quadrature,
    exchange_kkt_ok,
    outage_mc_validator,
    outage_threshold_snr,
    random_small_config,
    relative_gap,
    routing_objective,
    routing_oracle,
    run_suite,
    waterfill_row,
)


class TestReports:
    def test_relative_gap(self):
        assert relative_gap(1.0, 1.001) == pytest.approx(0.001 / 1.001)
        assert relative_gap(0.0, 0.0) == 0.0

    def test_compare_and_line(self):
        rep = OracleReport.compare("x", 2.0, 2.0 + 1e-9, 1e-6)
        assert rep.passed
        assert rep.line().startswith("PASS x")
        assert not OracleReport.compare("y", 1.0, 2.0, 0.1).passed
        assert rep.as_dict()["quantity"] == "x"


class TestRoutingOracle:
    def test_single_link(self):
        x, obj = routing_oracle([0.4], 1.5, "pool")
        np.testing.assert_array_equal(x, [1.5])
        assert obj == pytest.approx(2 ** 0.4 * (2 ** 1.5 - 1))

    def test_symmetric_two_links(self):
        for mode in ("pool", "peel"):
            x, _ = routing_oracle([1.0, 1.0], 2.0, mode)
            np.testing.assert_allclose(x, [1.0, 1.0])

    def test_hand_trace_within_one_step(self):
        x, _ = routing_oracle([0.0, 3.0], 2.0, "pool")
        np.testing.assert_allclose(x, [2.0, 0.0], atol=0.005 * 2.0)

    def test_refuses_many_links(self):
        with pytest.raises(ValueError):
            routing_oracle(np.zeros(5), 1.0, "pool")

    def test_three_links_fast(self):
        start = time.perf_counter()
        routing_oracle([0.1, 0.2, 0.3], 1.0, "peel")
        assert time.perf_counter() - start < 10.0

    def test_kkt_detects_bad_split(self):
        costs = np.array([0.0, 2.0])
        assert not exchange_kkt_ok([0.0, 1.0], costs, "pool", 1e-3)
        x = waterfill_row(costs, 1.0, "pool")
        assert exchange_kkt_ok(x, costs, "pool", 1e-6)
        assert routing_objective(x, costs, "pool") < routing_objective([0.5, 0.5], costs, "pool")


class TestOutageValidator:
    def test_huge_snr(self):
        assert outage_mc_validator(1e12, 5e5, 5e5, trials=10 ** 4) == 0.0

    def test_zero_flow(self):
        assert outage_mc_validator(1.0, 0.0, 5e5, trials=10 ** 4) == 0.0

    def test_calibrated_threshold(self):
        gamma = outage_threshold_snr(5e5, 5e5, 0.01)
        assert gamma == pytest.approx(1.0 / math.log(100 / 99))
        rate = outage_mc_validator(gamma, 5e5, 5e5, trials=10 ** 6, seed=1)
        assert 0.008 <= rate <= 0.012

    def test_too_few_trials(self):
        with pytest.raises(ValueError):
            outage_mc_validator(1.0, 1.0, 1.0, trials=100)


class TestQuadrature:
    def test_e1_quadrature(self):
        assert e1_quadrature(1.0) == pytest.approx(0.2193839344, abs=1e-10)


class TestBoundaryScan:
    def _two_ap_state(self, mode, p, tradeoff, gains=(2.0, 2.0)):
        cfg = square_config(n_aps=2, grid=40, tradeoff=tradeoff, ap_rx_gain=gains)
        grid = build_grid(cfg)
        coeffs = derive_coefficients(cfg)
        p = np.asarray(p, dtype=float)
        part = weighted_voronoi_assign(p, np.ones(2), grid)
        q = np.array([[500.0, 500.0]])
        return OptimizerState(cfg, mode, grid, coeffs, p, q, part, np.ones((2, 1)))

    @pytest.mark.parametrize("mode", ["pool", "peel"])
    def test_symmetric(self, mode):
        state = self._two_ap_state(mode, [[250, 500], [750, 500]], 0.25)
        scan = boundary_oracle_scan(0, 1, state, n_samples=200)
        assert alpha_distance(0.5, scan) == 0.0

    def test_zero_tradeoff_weighted_bisector(self):
        state = self._two_ap_state("pool", [[300, 400], [700, 600]], 0.0, gains=(2.0, 4.0))
        a = state.coeffs.a
        target = math.sqrt(a[0]) / (math.sqrt(a[0]) + math.sqrt(a[1]))
        scan = boundary_oracle_scan(0, 1, state, n_samples=200)
        assert alpha_distance(target, scan) <= 2.0 / 200

    def test_deterministic_and_guarded(self):
        cfg = random_small_config(np.random.default_rng(4))
        state, _ = initial_state(cfg, "peel")
        i, j = neighbors(state.partition, state.grid)[0]
        s1 = boundary_oracle_scan(i, j, state)
        s2 = boundary_oracle_scan(i, j, state)
        np.testing.assert_array_equal(s1.values, s2.values)
        with pytest.raises(ValueError):
            boundary_oracle_scan(i, j, state, n_samples=50)
        with pytest.raises(ValueError):
            boundary_oracle_scan(i, j, state, mode="pool")


class TestSuites:
    def test_numerics_suite(self):
        reports = run_suite("numerics")
        assert all(r.passed for r in reports)

    def test_boundary_suite(self):
        reports = run_suite("boundary", seed=1)
        assert reports and all(r.passed for r in reports)

    def test_unknown_suite(self):
        with pytest.raises(ValueError):
            run_suite("nope")
