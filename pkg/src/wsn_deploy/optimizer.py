"""Alternating minimisation of node positions, cell boundaries and routing.

One outer iteration runs three steps, each of which cannot raise the
objective: an exact position solve with partition and flows fixed, a sweep
of pairwise boundary line searches, and a routing refresh. ``pool`` uses the
outage objective, ``peel`` the ergodic one.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import routing
from .field import (DensityGrid, Partition, RegionStats, UnionSplit, are_neighbors, build_grid,
                    inside_convex, neighbors, weighted_voronoi_assign)
from .model import (LOG2E, Deployment, LinkCoefficients, ScenarioConfig, check_config,
                    derive_coefficients)
from .numerics import (RootNotBracketedError, RootSolveSettings, bisect_root, d_inv_u_recip,
                       inv_u_recip)
from .objective import PowerBreakdown, ap_link_powers, sensor_factor, total_for

log = logging.getLogger(__name__)

MODES = ("pool", "peel")
MONOTONE_SLACK = 1e-9
LLOYD_TOL = 1e-6
LLOYD_MAX_ROUNDS = 500
SWEEP_TOL = 1e-6
MAX_SWEEPS = 50
ACCEPT_MARGIN = 1e-12
# residuals are in W/sensor; only the bracket width should stop the search
BOUNDARY_SETTINGS = RootSolveSettings(abs_tol=1e-300, rel_tol=1e-12, max_bisections=200)


# --- trace ---------------------------------------------------------------------

@dataclass(frozen=True)
class TraceRecord:
    iteration: int
    step: str
    d_total: float
    sensor: float
    ap: float


@dataclass
class OptimizationTrace:
    records: list = field(default_factory=list)
    status: str = "running"
    defects: list = field(default_factory=list)

    def add(self, iteration, step, bd: PowerBreakdown):
        if self.records:
            prev = self.records[-1].d_total
            if bd.weighted_total > prev * (1.0 + MONOTONE_SLACK):
                msg = (f"objective rose at iteration {iteration} ({step}): "
                       f"{prev:.17g} -> {bd.weighted_total:.17g}")
                self.defects.append(msg)
                log.warning(msg)
        self.records.append(TraceRecord(iteration, step, bd.weighted_total,
                                        bd.sensor_power, bd.ap_power))

    @property
    def objectives(self) -> np.ndarray:
        return np.array([r.d_total for r in self.records])

    def is_monotone(self, slack=MONOTONE_SLACK) -> bool:
        d = self.objectives
        return bool(np.all(d[1:] <= d[:-1] * (1.0 + slack)))

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "d_total_w", "sensor_w", "ap_w", "step"])
            for r in self.records:
                w.writerow([r.iteration, repr(r.d_total), repr(r.sensor), repr(r.ap), r.step])


# --- state ---------------------------------------------------------------------

@dataclass
class OptimizerState:
    """Mutable working state of one run. ``r`` rows always sum to one."""

    config: ScenarioConfig
    mode: str
    grid: DensityGrid
    coeffs: LinkCoefficients
    p: np.ndarray
    q: np.ndarray
    partition: Partition
    r: np.ndarray

    def stats(self) -> RegionStats:
        return self.partition.stats(self.grid, fallback=self.p)

    @property
    def vols(self) -> np.ndarray:
        return np.bincount(self.partition.owner, weights=self.grid.mass,
                           minlength=self.config.n_aps)

    @property
    def flows(self) -> np.ndarray:
        return self.r * (self.config.rb * self.vols)[:, None]

    @property
    def deployment(self) -> Deployment:
        return Deployment(p=self.p.copy(), q=self.q.copy())

    def objective(self) -> PowerBreakdown:
        return total_for(self.mode, self.deployment, self.partition, self.grid, self.flows,
                         self.config, self.coeffs)

    def set_routing(self, flows):
        """Normalise a flow matrix; empty rows fall back to the cheapest link."""
        rows = flows.sum(axis=1)
        r = routing.limit_split(self.mode, self.p, self.q, self.coeffs.b)
        ok = rows > 0
        r[ok] = flows[ok] / rows[ok, None]
        self.r = r


# --- initialisation -------------------------------------------------------------

def sample_in_region(config: ScenarioConfig, n, rng) -> np.ndarray:
    x0, y0, x1, y1 = config.bbox
    out = np.empty((0, 2))
    while len(out) < n:
        pts = rng.uniform([x0, y0], [x1, y1], size=(2 * n + 8, 2))
        out = np.vstack([out, pts[inside_convex(pts, config.vertices)]])
    return out[:n]


def init_weighted_lloyd(config: ScenarioConfig, grid: DensityGrid, seed=None,
                        coeffs: LinkCoefficients = None, rng=None):
    """Weighted-Voronoi / centroid alternation from random starting points.

    Returns ``(p, partition, history)`` where ``history`` holds the weighted
    distortion sum a_n |p_n - w|^2 before each centroid move.
    """
    coeffs = coeffs or derive_coefficients(config)
    rng = rng if rng is not None else np.random.default_rng(config.seed if seed is None else seed)
    p = sample_in_region(config, config.n_aps, rng)
    tol = LLOYD_TOL * config.diameter
    history = []
    for _ in range(LLOYD_MAX_ROUNDS):
        part = weighted_voronoi_assign(p, coeffs.a, grid)
        stats = part.stats(grid, fallback=p)
        history.append(float(np.sum(coeffs.a * (stats.inertia + stats.vols
                                                 * ((p - stats.cents) ** 2).sum(1)))))
        moved = np.sqrt(((stats.cents - p) ** 2).sum(1)).max()
        p = stats.cents.copy()
        if moved < tol:
            break
    part = weighted_voronoi_assign(p, coeffs.a, grid)
    return p, part, history


def init_bs_lloyd(p, m: int, seed=None, rng=None, max_rounds=500) -> np.ndarray:
    """k-means on the AP points with k-means++ seeding.

    With m >= N every AP point becomes a centre and surplus centres repeat
    AP points in index order.
    """
    p = np.asarray(p, dtype=float)
    n = len(p)
    if m >= n:
        return np.array([p[k % n] for k in range(m)])
    rng = rng if rng is not None else np.random.default_rng(seed)
    centers = [p[rng.integers(n)]]
    for _ in range(1, m):
        d2 = np.min(((p[:, None, :] - np.array(centers)[None]) ** 2).sum(-1), axis=1)
        if d2.sum() > 0:
            centers.append(p[rng.choice(n, p=d2 / d2.sum())])
        else:
            centers.append(p[len(centers) % n])
    q = np.array(centers)
    for _ in range(max_rounds):
        lab = np.argmin(((p[:, None, :] - q[None]) ** 2).sum(-1), axis=1)
        new_q = q.copy()
        for k in range(m):
            if np.any(lab == k):
                new_q[k] = p[lab == k].mean(axis=0)
        if np.array_equal(new_q, q):
            break
        q = new_q
    return q


def initial_state(config: ScenarioConfig, mode: str, seed=None, grid=None) -> tuple:
    """Build the starting state; also returns the seeded RNG used for later sweeps."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    check_config(config)
    seed = config.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    grid = grid or build_grid(config)
    coeffs = derive_coefficients(config)
    p, part, _ = init_weighted_lloyd(config, grid, coeffs=coeffs, rng=rng)
    q = init_bs_lloyd(p, config.n_bss, rng=rng)
    state = OptimizerState(config, mode, grid, coeffs, p, q, part,
                           np.zeros((config.n_aps, config.n_bss)))
    state.set_routing(routing.route_all(mode, p, q, coeffs.b, state.vols, config))
    return state, rng


# --- step 1: positions ------------------------------------------------------------

def position_weights(mode: str, stats: RegionStats, flows, config: ScenarioConfig,
                     coeffs: LinkCoefficients):
    """Node weights s_n and link weights w_nm (without lambda) of the quadratic in (P, Q).

    The outage weights omit the common 1/ln(1/(1-eps)) factor.
    """
    flows = np.asarray(flows, dtype=float)
    if mode == "pool":
        s = coeffs.a * stats.vols * config.sensor_rate_gain
        w = coeffs.b * np.expm1(flows / config.bandwidth * math.log(2.0))
    else:
        s = coeffs.a * stats.vols * sensor_factor(mode, config)
        w = coeffs.b * inv_u_recip(flows / config.ergodic_unit)
    return s, w


def solve_positions(s, w, lam, cents, p, q, bbox=None):
    """Joint minimiser of sum s_n |p_n - c_n|^2 + lam sum w_nm |p_n - q_m|^2.

    Nodes whose total weight is zero stay where they are. With lam = 0 the
    APs sit on their centroids and each BS goes to the w-weighted mean of the
    APs (the limit of the coupled conditions).
    """
    n, m = w.shape
    p_new = np.array(p, dtype=float)
    q_new = np.array(q, dtype=float)
    if lam == 0:
        has = s > 0
        p_new[has] = cents[has]
        col = w.sum(axis=0)
        ok = col > 0
        q_new[ok] = (w[:, ok].T @ p_new) / col[ok, None]
    else:
        # least squares on rows sqrt(s)(p - c) and sqrt(lam w)(p - q): half the
        # dynamic range of the normal equations, which break down once link
        # weights exceed sensor weights by ~1e16
        nodes = np.vstack([p_new, q_new])
        rows, targets = [], []
        for k in np.flatnonzero(s > 0):
            row = np.zeros(n + m)
            row[k] = math.sqrt(s[k])
            rows.append(row)
            targets.append(row[k] * cents[k])
        for k, j in zip(*np.nonzero(w > 0)):
            row = np.zeros(n + m)
            row[k] = math.sqrt(lam * w[k, j])
            row[n + j] = -row[k]
            rows.append(row)
            targets.append(np.zeros(2))
        if rows:
            mat = np.array(rows)
            free = np.any(mat != 0, axis=0)
            sol = np.linalg.lstsq(mat[:, free], np.array(targets), rcond=None)[0]
            nodes[free] = sol
        p_new, q_new = nodes[:n], nodes[n:]
    if bbox is not None:
        x0, y0, x1, y1 = bbox
        for arr in (p_new, q_new):
            np.clip(arr[:, 0], x0, x1, out=arr[:, 0])
            np.clip(arr[:, 1], y0, y1, out=arr[:, 1])
    return p_new, q_new


def pool_position_update(stats: RegionStats, flows, p, q, config: ScenarioConfig,
                         coeffs: LinkCoefficients = None):
    """Positions satisfying the outage-objective stationarity conditions."""
    coeffs = coeffs or derive_coefficients(config)
    s, w = position_weights("pool", stats, flows, config, coeffs)
    return solve_positions(s, w, config.tradeoff, stats.cents, p, q, config.bbox)


def peel_position_update(stats: RegionStats, flows, p, q, config: ScenarioConfig,
                         coeffs: LinkCoefficients = None):
    """Positions satisfying the ergodic-objective stationarity conditions."""
    coeffs = coeffs or derive_coefficients(config)
    s, w = position_weights("peel", stats, flows, config, coeffs)
    return solve_positions(s, w, config.tradeoff, stats.cents, p, q, config.bbox)


def position_step(state: OptimizerState) -> bool:
    """Move nodes to the quadratic minimiser; keep the old ones if rounding made it worse."""
    update = pool_position_update if state.mode == "pool" else peel_position_update
    before = state.objective().weighted_total
    old = state.p, state.q
    state.p, state.q = update(state.stats(), state.flows, state.p, state.q, state.config,
                              state.coeffs)
    if state.objective().weighted_total > before:
        log.debug("position update rejected: %.17g > %.17g",
                  state.objective().weighted_total, before)
        state.p, state.q = old
        return False
    return True


# --- step 2: boundaries -----------------------------------------------------------

def _d_recip_or_limit(y):
    y = np.asarray(y, dtype=float)
    out = np.ones_like(y)
    pos = y > 0
    if pos.any():
        out[pos] = d_inv_u_recip(y[pos])
    return out


class PairProblem:
    """Everything needed to move the boundary between regions i and j.

    Link-side quantities depend on alpha only through the cell count, so they
    are cached per count.
    """

    def __init__(self, state: OptimizerState, i: int, j: int):
        self.state = state
        self.mode = state.mode
        cfg = state.config
        self.cfg = cfg
        self.split = UnionSplit(i, j, state.p, state.coeffs.a, state.partition, state.grid)
        self.i, self.j = self.split.i, self.split.j
        self.lam = cfg.tradeoff
        self.kappa = sensor_factor(self.mode, cfg)
        b = state.coeffs.b
        # unfloored distances, exactly as in the objective
        self.bd2 = {n: b[n] * ((state.q - state.p[n]) ** 2).sum(1) for n in (self.i, self.j)}
        self.r = {n: state.r[n].copy() for n in (self.i, self.j)}
        self._deriv = {}
        self._power = {}

    # link-side derivative of the (unweighted) AP power w.r.t. own volume
    def _link_deriv(self, n, v):
        key = (n, v)
        if key not in self._deriv:
            r, bd2, cfg = self.r[n], self.bd2[n], self.cfg
            if self.mode == "pool":
                val = np.sum(math.log(2.0) / cfg.bandwidth * cfg.rb * r * bd2
                             * np.exp2(r * cfg.rb * v / cfg.bandwidth))
            else:
                y = r * cfg.rb * v / cfg.ergodic_unit
                active = r > 0
                val = np.sum(bd2[active] * (r[active] * cfg.rb / cfg.ergodic_unit)
                             * _d_recip_or_limit(y[active]))
            self._deriv[key] = float(val)
        return self._deriv[key]

    def _link_power(self, n, v):
        key = (n, v)
        if key not in self._power:
            flows = self.r[n] * self.cfg.rb * v
            self._power[key] = float(np.sum(ap_link_powers(self.mode, self.bd2[n], 1.0, flows,
                                                           self.cfg)))
        return self._power[key]

    def residual(self, alpha: float) -> float:
        """Marginal saving from handing boundary sensors at h(alpha) to region i.

        Negative at alpha = 0, positive at alpha = 1, nondecreasing in between.
        The outage form drops the common 1/ln(1/(1-eps)) factor.
        """
        sp = self.split
        k = sp.count(alpha)
        vi, vj = sp.volumes_at_count(k)
        h = sp.h(alpha)
        if self.mode == "pool":
            g = self.cfg.sensor_rate_gain
        else:
            g = self.kappa
        lhs = g * sp.ai * float(((sp.pi - h) ** 2).sum()) + self.lam * self._link_deriv(self.i, vi)
        rhs = g * sp.aj * float(((sp.pj - h) ** 2).sum()) + self.lam * self._link_deriv(self.j, vj)
        return rhs - lhs

    def local_objective_at_count(self, k) -> float:
        sp = self.split
        si, sj = sp.sensor_moments_at_count(k)
        vi, vj = sp.volumes_at_count(k)
        sensor = self.kappa * (sp.ai * si + sp.aj * sj)
        return sensor + self.lam * (self._link_power(self.i, vi) + self._link_power(self.j, vj))

    def local_objective_current(self) -> float:
        sp = self.split
        vi, vj, si, sj = sp.current_moments()
        sensor = self.kappa * (sp.ai * si + sp.aj * sj)
        return sensor + self.lam * (self._link_power(self.i, vi) + self._link_power(self.j, vj))


def _pair_problem(i, j, state):
    if not are_neighbors(i, j, state.partition, state.grid):
        raise ValueError(f"regions {i} and {j} are not neighbours")
    return PairProblem(state, i, j)


def pool_boundary_residual(i, j, alpha, state: OptimizerState) -> float:
    """Outage balance condition at h = alpha p_i + (1 - alpha) p_j (nondecreasing in alpha)."""
    if state.mode != "pool":
        state = _as_mode(state, "pool")
    return _pair_problem(i, j, state).residual(alpha)


def peel_boundary_residual(i, j, alpha, state: OptimizerState) -> float:
    """Ergodic balance condition at h(alpha)."""
    if state.mode != "peel":
        state = _as_mode(state, "peel")
    return _pair_problem(i, j, state).residual(alpha)


def _as_mode(state, mode):
    return OptimizerState(state.config, mode, state.grid, state.coeffs, state.p, state.q,
                          state.partition, state.r)


@dataclass(frozen=True)
class BoundaryStep:
    i: int
    j: int
    alpha: float
    bracketed: bool
    residual: float
    before: float
    after: float
    accepted: bool


def boundary_root(problem: PairProblem, settings: RootSolveSettings = BOUNDARY_SETTINGS):
    """Root of the balance residual on [0, 1].

    Returns ``(alpha, candidate_counts, bracketed)``. Without a sign change the
    two endpoints are returned as candidates.
    """
    sp = problem.split
    try:
        alpha, lo, hi = bisect_root(problem.residual, 0.0, 1.0, settings)
    except RootNotBracketedError:
        return None, sorted({sp.count(0.0), sp.count(1.0)}), False
    return alpha, sorted({sp.count(lo), sp.count(alpha), sp.count(hi)}), True


def boundary_adjust_pair(i, j, state: OptimizerState, mode: Optional[str] = None,
                         settings: RootSolveSettings = BOUNDARY_SETTINGS) -> BoundaryStep:
    """Line search for the boundary point; commits the split only on a strict decrease."""
    if mode is not None and mode != state.mode:
        raise ValueError("mode does not match the optimizer state")
    problem = _pair_problem(i, j, state)
    sp = problem.split
    alpha, candidates, bracketed = boundary_root(problem, settings)
    before = problem.local_objective_current()
    values = [problem.local_objective_at_count(k) for k in candidates]
    best = int(np.argmin(values))
    k_best = candidates[best]
    after = values[best]
    if alpha is None:
        alpha = 0.0 if k_best == sp.count(0.0) else 1.0
    accepted = after < before - ACCEPT_MARGIN * abs(before)
    if accepted:
        state.partition = sp.partition_at_count(k_best)
    else:
        after = before
    return BoundaryStep(sp.i, sp.j, float(alpha), bracketed, problem.residual(alpha),
                        before, after, accepted)


def boundary_sweeps(state: OptimizerState, rng, reference: float) -> int:
    """Random-order pair sweeps until one sweep gains < SWEEP_TOL relative."""
    n_sweeps = 0
    for _ in range(MAX_SWEEPS):
        pairs = neighbors(state.partition, state.grid)
        gain = 0.0
        for idx in rng.permutation(len(pairs)):
            i, j = pairs[idx]
            if not are_neighbors(i, j, state.partition, state.grid):
                continue
            step = boundary_adjust_pair(i, j, state)
            gain += step.before - step.after
        n_sweeps += 1
        if gain < SWEEP_TOL * reference:
            break
    return n_sweeps


# --- step 3: routing ---------------------------------------------------------------

def routing_step(state: OptimizerState, current: PowerBreakdown) -> bool:
    """Refresh routing. The ergodic router works on an upper bound, so its
    proposal is kept only when the true objective strictly drops."""
    flows = routing.route_all(state.mode, state.p, state.q, state.coeffs.b, state.vols,
                              state.config)
    if state.mode == "pool":
        state.set_routing(flows)
        return True
    old_r = state.r
    state.set_routing(flows)
    if state.objective().weighted_total < current.weighted_total:
        return True
    state.r = old_r
    return False


# --- outer loop --------------------------------------------------------------------

@dataclass
class RunResult:
    algorithm: str
    seed: int
    state: OptimizerState
    trace: OptimizationTrace
    iterations: int

    @property
    def deployment(self) -> Deployment:
        return self.state.deployment

    @property
    def partition(self) -> Partition:
        return self.state.partition

    @property
    def flows(self) -> np.ndarray:
        return self.state.flows

    @property
    def breakdown(self) -> PowerBreakdown:
        return self.state.objective()

    @property
    def converged(self) -> bool:
        return self.trace.status == "converged"


def run(config: ScenarioConfig, mode: str, seed=None, state: OptimizerState = None,
        rng=None) -> RunResult:
    """Full alternating minimisation. A prepared ``state`` (with its ``rng``) may
    be passed to share one initialisation between runs."""
    seed = config.seed if seed is None else seed
    if state is None:
        state, rng = initial_state(config, mode, seed)
    elif rng is None:
        rng = np.random.default_rng(seed)
    trace = OptimizationTrace()
    current = state.objective()
    trace.add(0, "init", current)
    iterations = 0
    for it in range(1, config.max_iters + 1):
        iterations = it
        d_old = current.weighted_total
        position_step(state)
        current = state.objective()
        trace.add(it, "positions", current)
        boundary_sweeps(state, rng, current.weighted_total)
        current = state.objective()
        trace.add(it, "boundaries", current)
        routing_step(state, current)
        current = state.objective()
        trace.add(it, "routing", current)
        if d_old <= 0 or (d_old - current.weighted_total) / d_old < config.tau:
            trace.status = "converged"
            break
    else:
        trace.status = "max_iters"
    log.info("%s seed %s: %s after %d iterations, D = %.6g W", mode, seed, trace.status,
             iterations, current.weighted_total)
    return RunResult(mode, seed, state, trace, iterations)


def pool_run(config: ScenarioConfig, seed=None) -> RunResult:
    return run(config, "pool", seed)


def peel_run(config: ScenarioConfig, seed=None) -> RunResult:
    return run(config, "peel", seed)


def clone_state(state: OptimizerState, **changes) -> OptimizerState:
    values = dict(config=state.config, mode=state.mode, grid=state.grid, coeffs=state.coeffs,
                  p=state.p.copy(), q=state.q.copy(), partition=state.partition,
                  r=state.r.copy())
    values.update(changes)
    return OptimizerState(**values)
