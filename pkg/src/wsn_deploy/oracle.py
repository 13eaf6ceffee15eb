"""Brute-force verifiers for the optimality conditions used by the optimizer.

Nothing here is called by the optimizer itself; tests and the ``verify``
command use these to audit it.
"""

from __future__ import annotations

import itertools
import math
import sys
from dataclasses import asdict, dataclass

import numpy as np
from scipy import integrate

from . import routing
from .field import UnionSplit, are_neighbors, neighbors
from .model import LOG2E, Deployment, ScenarioConfig, reference_scenario
from .numerics import exp_integral_e1, u_inverse, u_of
from .objective import PowerBreakdown, evaluate, total_for
from .optimizer import PairProblem, boundary_root, initial_state, position_step

EPS_MACH = sys.float_info.epsilon


@dataclass(frozen=True)
class OracleReport:
    quantity: str
    oracle_value: float
    artifact_value: float
    gap: float
    tolerance: float
    passed: bool

    @classmethod
    def compare(cls, quantity, oracle_value, artifact_value, tolerance, gap=None):
        if gap is None:
            gap = relative_gap(oracle_value, artifact_value)
        return cls(quantity, float(oracle_value), float(artifact_value), float(gap),
                   float(tolerance), bool(gap <= tolerance))

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return (f"{flag} {self.quantity}: oracle={self.oracle_value:.10g} "
                f"artifact={self.artifact_value:.10g} gap={self.gap:.3g} tol={self.tolerance:.3g}")

    def as_dict(self) -> dict:
        return asdict(self)


def relative_gap(a, b) -> float:
    a, b = float(a), float(b)
    return abs(a - b) / max(abs(a), abs(b), EPS_MACH)


# --- routing ---------------------------------------------------------------------

def routing_objective(x, costs, mode) -> float:
    """Per-AP cost in normalised units: sum e^{c} (2^x - 1) or sum e^{c} (e^x - 1) / 2."""
    x = np.asarray(x, dtype=float)
    c = np.asarray(costs, dtype=float)
    if mode == "pool":
        return float(np.sum(np.exp2(c) * np.expm1(x * math.log(2.0)), axis=-1))
    return float(np.sum(np.exp(c) * np.expm1(x) / 2.0, axis=-1))


def routing_oracle(costs, budget, mode: str, step: float = 0.005):
    """Exhaustive minimiser over the flow simplex at resolution ``step``.

    Returns ``(x, objective)`` in normalised flow units (flow / B for the
    outage form, 2 flow / (B log2 e) for the ergodic bound).
    """
    c = np.asarray(costs, dtype=float)
    m = len(c)
    if m > 4:
        raise ValueError("routing_oracle supports at most 4 links")
    divisions = int(round(1.0 / step))
    if m == 1:
        return np.array([float(budget)]), routing_objective([budget], c, mode)
    # stars-and-bars enumeration of all grid points on the simplex
    grids = np.stack(np.meshgrid(*[np.arange(divisions + 1)] * (m - 1), indexing="ij"), -1)
    grids = grids.reshape(-1, m - 1)
    grids = grids[grids.sum(1) <= divisions]
    frac = np.column_stack([grids, divisions - grids.sum(1)]) / divisions
    x = frac * budget
    base = np.exp2(c) if mode == "pool" else np.exp(c) / 2.0
    kernel = np.expm1(x * math.log(2.0)) if mode == "pool" else np.expm1(x)
    obj = (base * kernel).sum(1)
    best = int(np.argmin(obj))
    return x[best], float(obj[best])


def exchange_kkt_ok(x, costs, mode, eta, rel_slack=1e-12) -> bool:
    """Moving eta between any ordered pair of links never lowers the cost."""
    x = np.asarray(x, dtype=float)
    c = np.asarray(costs, dtype=float)
    base = np.exp2(c) if mode == "pool" else np.exp(c) / 2.0
    rate = math.log(2.0) if mode == "pool" else 1.0
    obj = routing_objective(x, c, mode)
    for s, t in itertools.permutations(range(len(x)), 2):
        if x[s] < eta:
            continue
        # change written with expm1 so small moves keep full precision
        delta = (base[s] * math.exp(rate * x[s]) * math.expm1(-rate * eta)
                 + base[t] * math.exp(rate * x[t]) * math.expm1(rate * eta))
        if delta < -rel_slack * obj:
            return False
    return True


def waterfill_row(costs, budget, mode, config: ScenarioConfig = None):
    """Run the production router on a synthetic AP whose links have the given costs.

    The AP sits at the origin with BSs at unit distance, so b_m alone sets
    each cost. Returns the row in normalised units.
    """
    config = config or reference_scenario()
    c = np.asarray(costs, dtype=float)
    m = len(c)
    angles = 2.0 * math.pi * np.arange(m) / m
    q = np.column_stack([np.cos(angles), np.sin(angles)])
    p = np.zeros((1, 2))
    if mode == "pool":
        b_row = np.exp2(c)
        v = budget * config.bandwidth / config.rb
        flows = routing.waterfill_outage(0, p, q, b_row, v, config)
        return flows / config.bandwidth
    b_row = np.exp(c)
    unit = config.bandwidth * LOG2E / 2.0
    v = budget * unit / config.rb
    flows = routing.waterfill_ergodic(0, p, q, b_row, v, config)
    return flows / unit


def routing_suite(n_instances=100, m=3, seed=0, step=0.005, tol=1e-3):
    """Water-filling vs grid search on random cost vectors and budgets."""
    rng = np.random.default_rng(seed)
    config = reference_scenario()
    reports = []
    for k in range(n_instances):
        costs = rng.uniform(-2.0, 2.0, size=m)
        budget = rng.uniform(0.05, 3.0)
        for mode in ("pool", "peel"):
            x = waterfill_row(costs, budget, mode, config)
            _, grid_obj = routing_oracle(costs, budget, mode, step)
            wf_obj = routing_objective(x, costs, mode)
            reports.append(OracleReport.compare(f"routing[{mode}] instance {k}", grid_obj,
                                                wf_obj, tol))
            kkt = exchange_kkt_ok(x, costs, mode, 1e-6 * budget)
            reports.append(OracleReport(f"exchange-kkt[{mode}] instance {k}", 1.0,
                                        float(kkt), 0.0 if kkt else 1.0, 0.0, kkt))
    return reports


# --- outage Monte Carlo ---------------------------------------------------------

def outage_threshold_snr(flow, bandwidth, eps) -> float:
    """Mean SNR at which a Rayleigh link carrying ``flow`` has outage exactly eps."""
    return math.expm1(flow / bandwidth * math.log(2.0)) / -math.log1p(-eps)


def outage_mc_validator(gamma, flow, bandwidth, trials=10 ** 6, seed=0) -> float:
    """Fraction of Exp(1) fading draws for which B log2(1 + |h|^2 gamma) < F."""
    if trials < 10 ** 4:
        raise ValueError("trials must be >= 1e4")
    if flow <= 0:
        return 0.0
    rng = np.random.default_rng(seed)
    h2 = rng.exponential(1.0, size=int(trials))
    return float(np.mean(bandwidth * np.log2(1.0 + h2 * gamma) < flow))


def outage_suite(seed=0, eps=0.01, trials=10 ** 6):
    bandwidth = 500e3
    reports = []
    for flow in (0.5 * bandwidth, bandwidth, 3.0 * bandwidth):
        gamma = outage_threshold_snr(flow, bandwidth, eps)
        rate = outage_mc_validator(gamma, flow, bandwidth, trials, seed)
        sigma = math.sqrt(eps * (1 - eps) / trials)
        reports.append(OracleReport.compare(f"outage rate at F/B={flow / bandwidth:g}", eps, rate,
                                            5 * sigma, gap=abs(rate - eps)))
    return reports


# --- numerics ---------------------------------------------------------------------

def e1_quadrature(x) -> float:
    """E1 by adaptive quadrature of exp(-x t)/t on [1, inf)."""
    val, _ = integrate.quad(lambda t: math.exp(-x * t) / t, 1.0, math.inf,
                            epsabs=0.0, epsrel=1e-13, limit=200)
    return val


def numerics_suite(seed=0, n=10 ** 4):
    rng = np.random.default_rng(seed)
    y = np.exp(rng.uniform(math.log(1e-4), math.log(50.0), size=n))
    x = u_inverse(y)
    recip = 1.0 / x
    lower = np.expm1(y)
    upper = np.expm1(2.0 * y) / 2.0
    sandwich = np.sum((lower < recip) & (recip < upper))
    roundtrip = np.max(np.abs(u_of(x) - y) / y)
    reports = [
        OracleReport("bound sandwich holds strictly", n, sandwich, (n - sandwich) / n, 0.0,
                     bool(sandwich == n)),
        OracleReport.compare("U(U^-1(y)) roundtrip", 0.0, roundtrip, 1e-9, gap=roundtrip),
    ]
    for xv in (0.01, 0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 30.0):
        reports.append(OracleReport.compare(f"E1({xv:g}) vs quadrature", e1_quadrature(xv),
                                            exp_integral_e1(xv), 1e-10))
    return reports


# --- boundary ---------------------------------------------------------------------

@dataclass(frozen=True)
class ScanResult:
    alpha: float  # centre of the minimising plateau
    lo: float  # plateau ends (alpha grid values attaining the minimum)
    hi: float
    objective: float
    alphas: np.ndarray
    values: np.ndarray


def pair_objective(state, split: UnionSplit, k: int) -> PowerBreakdown:
    """Full objective with the union split at count k and routing fractions held fixed."""
    part = split.partition_at_count(k)
    vols = np.bincount(part.owner, weights=state.grid.mass, minlength=state.config.n_aps)
    flows = state.r * (state.config.rb * vols)[:, None]
    return total_for(state.mode, state.deployment, part, state.grid, flows, state.config,
                     state.coeffs)


def boundary_oracle_scan(i, j, state, mode=None, n_samples=200) -> ScanResult:
    """Direct objective minimisation over an alpha grid for the pair (i, j)."""
    if n_samples < 100:
        raise ValueError("n_samples must be >= 100")
    if mode is not None and mode != state.mode:
        raise ValueError("mode does not match the state")
    if not are_neighbors(i, j, state.partition, state.grid):
        raise ValueError(f"regions {i} and {j} are not neighbours")
    split = UnionSplit(i, j, state.p, state.coeffs.a, state.partition, state.grid)
    alphas = np.linspace(0.0, 1.0, n_samples + 1)
    cache = {}
    values = np.empty_like(alphas)
    for idx, al in enumerate(alphas):
        k = split.count(al)
        if k not in cache:
            cache[k] = pair_objective(state, split, k).weighted_total
        values[idx] = cache[k]
    best = values.min()
    # evaluations of the same split are bitwise equal, so the plateau is exact
    at_min = np.flatnonzero(values == best)
    lo, hi = alphas[at_min[0]], alphas[at_min[-1]]
    return ScanResult(0.5 * (lo + hi), float(lo), float(hi), float(best), alphas, values)


def alpha_distance(alpha, scan: ScanResult) -> float:
    """Distance from alpha to the scan's minimising plateau."""
    if scan.lo <= alpha <= scan.hi:
        return 0.0
    return float(min(abs(alpha - scan.lo), abs(alpha - scan.hi)))


def random_small_config(rng, grid=40, tradeoff=None) -> ScenarioConfig:
    """Random instance with 2 <= N <= 5, M <= 2 on a rectangle."""
    n = int(rng.integers(2, 6))
    m = int(rng.integers(1, 3))
    w = float(rng.uniform(2e3, 1e4))
    h = float(rng.uniform(2e3, 1e4))
    lam = float(rng.choice([0.1, 0.25, 0.5, 1.0])) if tradeoff is None else tradeoff
    return reference_scenario(
        grid=grid,
        tradeoff=lam,
        region=((0.0, 0.0), (w, 0.0), (w, h), (0.0, h)),
        n_aps=n,
        n_bss=m,
        ap_tx_gain=tuple(float(v) for v in rng.choice([2.0, 4.0], n)),
        ap_rx_gain=tuple(float(v) for v in rng.choice([2.0, 4.0], n)),
        ap_loss=(1.0,) * n,
        bs_rx_gain=tuple(float(v) for v in rng.choice([2.0, 4.0], m)),
        # 30-100 sensors per AP keeps link loads F/B in a physical range
        sensor_count=float(n * rng.uniform(30, 100)),
        seed=int(rng.integers(1 << 31)),
    )


def boundary_suite(seed=0, n_scenarios=5, n_samples=200):
    """Residual roots against direct scans, on random small instances after one
    position update (so partitions are off-balance)."""
    rng = np.random.default_rng(seed)
    reports = []
    for s in range(n_scenarios):
        cfg = random_small_config(rng)
        for mode in ("pool", "peel"):
            state, _ = initial_state(cfg, mode)
            position_step(state)
            for i, j in neighbors(state.partition, state.grid):
                alpha, _, bracketed = boundary_root(PairProblem(state, i, j))
                scan = boundary_oracle_scan(i, j, state, n_samples=n_samples)
                if alpha is None:
                    alpha = 0.0 if scan.values[0] <= scan.values[-1] else 1.0
                dist = alpha_distance(alpha, scan)
                reports.append(OracleReport.compare(
                    f"boundary[{mode}] scenario {s} pair ({i},{j})", scan.alpha, alpha,
                    2.0 / n_samples, gap=dist))
    return reports


# --- position stationarity ----------------------------------------------------------

def position_gradient(state, step_frac=1e-2):
    """Central-difference gradient of the objective in every node coordinate,
    with partition and flows held fixed. Returns ``(grad, objective)``."""
    p = state.p.copy()
    q = state.q.copy()
    stats = state.stats()
    flows = state.flows
    h = step_frac * state.config.diameter

    def obj(pp, qq):
        return evaluate(state.mode, Deployment(pp, qq), stats, flows, state.config,
                      state.coeffs).weighted_total

    grads = []
    for arr_name in ("p", "q"):
        arr = p if arr_name == "p" else q
        g = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            plus, minus = arr.copy(), arr.copy()
            plus[idx] += h
            minus[idx] -= h
            if arr_name == "p":
                g[idx] = (obj(plus, q) - obj(minus, q)) / (2 * h)
            else:
                g[idx] = (obj(p, plus) - obj(p, minus)) / (2 * h)
        grads.append(g)
    return np.vstack(grads), obj(p, q)


def gradient_report(state, label="") -> OracleReport:
    """Dimensionless stationarity measure |grad| * diameter / D."""
    grad, d = position_gradient(state)
    measure = float(np.linalg.norm(grad) * state.config.diameter / d)
    return OracleReport.compare(f"stationarity {label}".strip(), 0.0, measure, 1e-5, gap=measure)


def run_suite(name: str, seed=0):
    suites = {
        "numerics": numerics_suite,
        "routing": routing_suite,
        "boundary": boundary_suite,
        "outage-mc": outage_suite,
    }
    if name not in suites:
        raise ValueError(f"unknown suite {name!r}")
    return suites[name](seed=seed)


__all__ = [
    "OracleReport", "ScanResult", "alpha_distance", "boundary_oracle_scan", "boundary_suite",
    "e1_quadrature", "exchange_kkt_ok", "gradient_report", "numerics_suite",
    "outage_mc_validator", "outage_suite", "outage_threshold_snr", "position_gradient",
    "random_small_config", "routing_objective", "waterfill_row", "routing_oracle", "routing_suite", "run_suite",
]
