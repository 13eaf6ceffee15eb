import csv

import numpy as np
import pytest

from conftest import square_config
from wsn_deploy.field import build_grid, neighbors, weighted_voronoi_assign
from wsn_deploy.model import derive_coefficients
from wsn_deploy.objective import ap_link_powers
from wsn_deploy.optimizer import (
    MODES,
    OptimizerState,
    PairProblem,
    boundary_adjust_pair,
    clone_state,
    init_bs_lloyd,
    init_weighted_lloyd,
    initial_state,
    peel_boundary_residual,
    peel_position_update,
    peel_run,
    pool_boundary_residual,
    pool_position_update,
    pool_run,
    position_step,
    routing_step,
    run,
    solve_positions,
)
from wsn_deploy.oracle import gradient_report, random_small_config


def small_states(seed, count, modes=MODES):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        cfg = random_small_config(rng)
        for mode in modes:
            yield initial_state(cfg, mode)[0]


def symmetric_state(mode, tradeoff=0.0):
    cfg = square_config(n_aps=2, n_bss=1, grid=40, tradeoff=tradeoff)
    grid = build_grid(cfg)
    coeffs = derive_coefficients(cfg)
    p = np.array([[250.0, 500.0], [750.0, 500.0]])
    q = np.array([[500.0, 500.0]])
    part = weighted_voronoi_assign(p, coeffs.a, grid)
    return OptimizerState(cfg, mode, grid, coeffs, p, q, part, np.ones((2, 1)))


class TestInitialisation:
    def test_single_ap_at_center(self):
        cfg = square_config(n_aps=1, grid=30)
        p, part, _ = init_weighted_lloyd(cfg, build_grid(cfg), seed=4)
        np.testing.assert_allclose(p, [[500.0, 500.0]], atol=1e-9)
        assert np.all(part.owner == 0)

    def test_distortion_nonincreasing(self):
        rng = np.random.default_rng(9)
        for _ in range(5):
            cfg = random_small_config(rng)
            _, _, history = init_weighted_lloyd(cfg, build_grid(cfg), seed=1)
            h = np.array(history)
            assert np.all(h[1:] <= h[:-1] * (1 + 1e-12))

    def test_deterministic(self):
        cfg = random_small_config(np.random.default_rng(2))
        grid = build_grid(cfg)
        p1, part1, _ = init_weighted_lloyd(cfg, grid, seed=5)
        p2, part2, _ = init_weighted_lloyd(cfg, grid, seed=5)
        np.testing.assert_array_equal(p1, p2)
        np.testing.assert_array_equal(part1.owner, part2.owner)

    def test_one_bs_at_mean(self, rng):
        p = rng.uniform(0, 100, (7, 2))
        np.testing.assert_allclose(init_bs_lloyd(p, 1, seed=0), [p.mean(0)])

    def test_as_many_bss_as_aps(self, rng):
        p = rng.uniform(0, 100, (4, 2))
        q = init_bs_lloyd(p, 4, seed=0)
        np.testing.assert_array_equal(np.sort(q, axis=0), np.sort(p, axis=0))

    def test_two_clusters(self, rng):
        a = rng.normal([0, 0], 1.0, (6, 2))
        b = rng.normal([100, 100], 1.0, (5, 2))
        q = init_bs_lloyd(np.vstack([a, b]), 2, seed=3)
        q = q[np.argsort(q[:, 0])]
        np.testing.assert_allclose(q, [a.mean(0), b.mean(0)], atol=1e-12)


class TestPositionUpdate:
    @pytest.mark.parametrize("update", [pool_position_update, peel_position_update])
    def test_zero_tradeoff_puts_aps_on_centroids(self, update):
        state = next(small_states(11, 1, modes=("pool",)))
        cfg = state.config.with_(tradeoff=0.0)
        stats = state.stats()
        p, _ = update(stats, state.flows, state.p, state.q, cfg, state.coeffs)
        np.testing.assert_array_equal(p, stats.cents)

    @pytest.mark.parametrize("mode", MODES)
    def test_single_link_collapses(self, mode):
        cfg = square_config(grid=20, tradeoff=0.25)
        state, _ = initial_state(cfg, mode, seed=0)
        state.q = np.array([[100.0, 900.0]])
        position_step(state)
        np.testing.assert_allclose(state.q, state.p, atol=1e-9)
        np.testing.assert_allclose(state.p, [[500.0, 500.0]], atol=1e-6)

    def test_stationary_point(self):
        for state in small_states(21, 4):
            assert position_step(state)
            assert gradient_report(state).passed

    def test_stiff_links_do_not_raise_objective(self):
        # with one AP carrying everything the link weight is ~1e16 x the sensor weight
        cfg = square_config(grid=20, side=10_000.0, tradeoff=0.25)
        for mode in MODES:
            state, _ = initial_state(cfg, mode, seed=0)
            before = state.objective().weighted_total
            position_step(state)
            assert state.objective().weighted_total <= before

    def test_weightless_nodes_stay(self):
        p = np.array([[1.0, 2.0], [3.0, 4.0]])
        q = np.array([[5.0, 6.0]])
        s = np.array([1.0, 0.0])
        w = np.array([[0.0], [0.0]])
        new_p, new_q = solve_positions(s, w, 0.5, np.array([[9.0, 9.0], [0.0, 0.0]]), p, q)
        np.testing.assert_allclose(new_p, [[9.0, 9.0], [3.0, 4.0]])
        np.testing.assert_array_equal(new_q, q)


class TestBoundaryResidual:
    @pytest.mark.parametrize("residual", [pool_boundary_residual, peel_boundary_residual])
    def test_midpoint_balance(self, residual):
        state = symmetric_state("pool")
        assert residual(0, 1, 0.5, state) == 0.0

    def test_sign_change_and_monotone(self):
        total = changed = 0
        for state in small_states(3, 6):
            for i, j in neighbors(state.partition, state.grid):
                pp = PairProblem(state, i, j)
                g = np.array([pp.residual(a) for a in np.linspace(0, 1, 101)])
                assert np.all(np.diff(g) >= -1e-12 * np.abs(g).max())
                total += 1
                changed += g[0] < 0 < g[-1]
                zero_lam = PairProblem(clone_state(state, config=state.config.with_(tradeoff=0.0)),
                                       i, j)
                assert zero_lam.residual(0.0) < 0 < zero_lam.residual(1.0)
        assert changed >= 0.8 * total

    def test_ergodic_link_term_matches_finite_difference(self):
        for state in small_states(8, 4, modes=("peel",)):
            cfg = state.config
            lam = cfg.tradeoff
            i, j = neighbors(state.partition, state.grid)[0]
            pp = PairProblem(state, i, j)
            bare = PairProblem(clone_state(state, config=cfg.with_(tradeoff=0.0)), i, j)
            alpha = 0.37
            link = (pp.residual(alpha) - bare.residual(alpha)) / lam
            vi, vj = pp.split.volumes(alpha)
            b = state.coeffs.b
            d2 = ((state.p[:, None] - state.q[None]) ** 2).sum(-1)

            def ap_power(n, v):
                flows = state.r[n] * cfg.rb * v
                return np.sum(ap_link_powers("peel", b[n], d2[n], flows, cfg))

            h = 1e-4 * min(vi, vj)
            fd = ((ap_power(j, vj + h) - ap_power(j, vj - h))
                  - (ap_power(i, vi + h) - ap_power(i, vi - h))) / (2 * h)
            scale = abs(ap_power(i, vi + h) - ap_power(i, vi - h)) / (2 * h) \
                + abs(ap_power(j, vj + h) - ap_power(j, vj - h)) / (2 * h)
            assert abs(link - fd) <= 1e-4 * scale


class TestBoundaryAdjust:
    @pytest.mark.parametrize("mode", MODES)
    def test_symmetric_pair_unchanged(self, mode):
        state = symmetric_state(mode)
        owner = state.partition.owner.copy()
        step = boundary_adjust_pair(0, 1, state)
        assert step.alpha == pytest.approx(0.5, abs=1e-9)
        assert not step.accepted
        assert step.after == step.before
        np.testing.assert_array_equal(state.partition.owner, owner)

    def test_root_straddles_sign_change(self):
        for state in small_states(5, 4):
            for i, j in neighbors(state.partition, state.grid):
                pp = PairProblem(state, i, j)
                step = boundary_adjust_pair(i, j, clone_state(state))
                if not step.bracketed:
                    continue
                a = step.alpha
                assert pp.residual(max(a - 1e-9, 0.0)) <= 0 <= pp.residual(min(a + 1e-9, 1.0))

    def test_steps_never_raise_objective(self):
        for state in small_states(6, 4):
            for i, j in neighbors(state.partition, state.grid):
                before = state.objective().weighted_total
                step = boundary_adjust_pair(i, j, state)
                after = state.objective().weighted_total
                assert step.after <= step.before
                assert after <= before * (1 + 1e-12)

    def test_mode_mismatch(self):
        state = symmetric_state("pool")
        with pytest.raises(ValueError):
            boundary_adjust_pair(0, 1, state, mode="peel")


class TestRouting:
    def test_ergodic_guard_never_raises_objective(self):
        for state in small_states(13, 5, modes=("peel",)):
            state.r = np.full_like(state.r, 1.0 / state.r.shape[1])
            current = state.objective()
            routing_step(state, current)
            assert state.objective().weighted_total <= current.weighted_total

    def test_flow_conservation_after_routing(self):
        for state in small_states(14, 3):
            routing_step(state, state.objective())
            np.testing.assert_allclose(state.flows.sum(1), state.config.rb * state.vols,
                                       rtol=1e-13)


class TestRuns:
    @pytest.mark.parametrize("runner", [pool_run, peel_run])
    def test_single_ap_single_bs(self, runner):
        res = runner(square_config(grid=20), seed=0)
        np.testing.assert_allclose(res.deployment.p, [[500.0, 500.0]], atol=1e-6)
        np.testing.assert_allclose(res.deployment.q, res.deployment.p, atol=1e-6)
        np.testing.assert_array_equal(res.state.r, [[1.0]])
        assert res.converged

    def test_deterministic(self):
        cfg = random_small_config(np.random.default_rng(31))
        for mode in MODES:
            a, b = run(cfg, mode, seed=3), run(cfg, mode, seed=3)
            np.testing.assert_array_equal(a.trace.objectives, b.trace.objectives)
            np.testing.assert_array_equal(a.state.partition.owner, b.state.partition.owner)

    def test_invariants_at_end(self):
        rng = np.random.default_rng(17)
        for _ in range(3):
            cfg = random_small_config(rng)
            for mode in MODES:
                res = run(cfg, mode)
                assert res.trace.is_monotone() and not res.trace.defects
                vols = res.state.vols
                assert vols.sum() == pytest.approx(res.state.grid.total_mass, rel=1e-12)
                np.testing.assert_allclose(res.flows.sum(1), cfg.rb * vols, rtol=1e-13)
                assert np.all(res.flows >= 0)

    def test_fixed_point_at_convergence(self):
        cfg = random_small_config(np.random.default_rng(5)).with_(tau=1e-12, max_iters=300)
        for mode in MODES:
            res = run(cfg, mode)
            assert res.converged
            again = clone_state(res.state)
            position_step(again)
            moved = max(np.abs(again.p - res.state.p).max(), np.abs(again.q - res.state.q).max())
            assert moved <= 1e-6 * cfg.diameter

    def test_iteration_cap(self):
        cfg = random_small_config(np.random.default_rng(44)).with_(tau=1e-15, max_iters=1)
        res = run(cfg, "pool")
        assert res.trace.status == "max_iters"
        assert res.iterations == 1

    def test_shared_start(self):
        cfg = random_small_config(np.random.default_rng(8))
        state, rng = initial_state(cfg, "pool")
        start = state.objective().weighted_total
        res = run(cfg, "pool", state=clone_state(state), rng=rng)
        assert res.trace.objectives[0] == start

    def test_trace_csv(self, tmp_path):
        res = run(random_small_config(np.random.default_rng(1)), "pool")
        path = tmp_path / "trace.csv"
        res.trace.write_csv(path)
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert list(rows[0]) == ["iter", "d_total_w", "sensor_w", "ap_w", "step"]
        assert len(rows) == 1 + 3 * res.iterations
        assert float(rows[-1]["d_total_w"]) == res.breakdown.weighted_total
