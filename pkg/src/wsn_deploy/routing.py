"""Per-AP water-filling flow split for the outage and ergodic objectives.

Both problems have the form  min sum_m e^{c_m} phi(x_m)  s.t. sum x_m = K,
x >= 0 with phi' proportional to an exponential, so at the optimum every
active link shares one level x_m + c_m = C and links with c_m > C carry
nothing. Costs and levels live in log2 units (outage) or natural-log units
(ergodic).
"""

from __future__ import annotations

import math

import numpy as np

from .model import LOG2E, ScenarioConfig

DISTANCE_FLOOR_M = 1e-3


def link_distance2(p_n, q) -> np.ndarray:
    d2 = ((np.asarray(q, dtype=float) - np.asarray(p_n, dtype=float)) ** 2).sum(-1)
    return np.maximum(d2, DISTANCE_FLOOR_M ** 2)


def waterfill_levels(costs, budget: float):
    """Solve the common-level problem in normalised units.

    Returns ``(x, level, n_iter)`` with x_m = max(level - c_m, 0) summing to
    ``budget``. The excluded set only grows, so at most M passes are made.
    """
    c = np.asarray(costs, dtype=float)
    m = len(c)
    if m == 0:
        raise ValueError("need at least one link")
    if budget <= 0:
        return np.zeros(m), -math.inf, 0
    active = np.ones(m, dtype=bool)
    level = (budget + c.sum()) / m
    n_iter = 1
    while True:
        new_active = active & ~(c > level)
        if np.array_equal(new_active, active):
            break
        active = new_active
        level = (budget + c[active].sum()) / active.sum()
        n_iter += 1
    x = np.where(active, level - c, 0.0)
    x = np.maximum(x, 0.0)
    # last active entry absorbs rounding so the budget is met exactly
    idx = np.flatnonzero(active)
    last = idx[-1]
    x[last] = max(budget - (x.sum() - x[last]), 0.0)
    return x, level, n_iter


def outage_costs(p_n, q, b_row) -> np.ndarray:
    return np.log2(np.asarray(b_row, dtype=float) * link_distance2(p_n, q))


def ergodic_costs(p_n, q, b_row) -> np.ndarray:
    return np.log(np.asarray(b_row, dtype=float) * link_distance2(p_n, q))


def _exact_row(x, scale, total):
    f = x * scale
    pos = np.flatnonzero(f > 0)
    if len(pos):
        f[pos[-1]] = max(total - (f.sum() - f[pos[-1]]), 0.0)
    return f


def waterfill_outage(n, p, q, b_row, v_n, config: ScenarioConfig) -> np.ndarray:
    """Flow row F_{n,.} (bits/s) minimising the outage-constrained AP power."""
    m = len(q)
    total = config.rb * v_n
    if v_n <= 0:
        return np.zeros(m)
    costs = outage_costs(np.asarray(p)[n], q, b_row)
    x, _, _ = waterfill_levels(costs, total / config.bandwidth)
    return _exact_row(x, config.bandwidth, total)


def waterfill_ergodic(n, p, q, b_row, v_n, config: ScenarioConfig) -> np.ndarray:
    """Flow row minimising the exponential upper bound on ergodic AP power."""
    m = len(q)
    total = config.rb * v_n
    if v_n <= 0:
        return np.zeros(m)
    unit = config.bandwidth * LOG2E / 2.0
    costs = ergodic_costs(np.asarray(p)[n], q, b_row)
    x, _, _ = waterfill_levels(costs, total / unit)
    return _exact_row(x, unit, total)


def route_all(mode: str, p, q, b, vols, config: ScenarioConfig) -> np.ndarray:
    """Flow matrix for every AP with ``mode`` in {"pool", "peel"}."""
    solver = {"pool": waterfill_outage, "peel": waterfill_ergodic}[mode]
    return np.array([solver(n, p, q, b[n], vols[n], config) for n in range(len(p))])


def limit_split(mode: str, p, q, b) -> np.ndarray:
    """Normalised routing for vanishing volume: all flow on the cheapest link.

    This is the small-budget limit of the water-filling solution and keeps a
    usable routing for APs whose region is currently empty.
    """
    costs_fn = outage_costs if mode == "pool" else ergodic_costs
    r = np.zeros((len(p), len(q)))
    for n in range(len(p)):
        r[n, int(np.argmin(costs_fn(p[n], q, b[n])))] = 1.0
    return r
