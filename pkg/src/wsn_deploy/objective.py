"""Transmit-power objectives under outage (D1) and ergodic (D2) link models."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .field import DensityGrid, Partition, RegionStats
from .model import LOG2E, Deployment, LinkCoefficients, ScenarioConfig, derive_coefficients
from .numerics import inv_u_recip


@dataclass(frozen=True)
class PowerBreakdown:
    sensor_power: float  # W
    ap_power: float  # W
    weighted_total: float  # W, sensor + lambda * ap

    def as_dict(self) -> dict:
        return asdict(self)


def _d2(p, q):
    return ((np.asarray(p, dtype=float) - np.asarray(q, dtype=float)) ** 2).sum(-1)


def outage_link_power_ap(b, distance, flow, config: ScenarioConfig):
    """b d^2 (2^{F/B} - 1) / ln(1/(1-eps))."""
    gain = np.expm1(np.asarray(flow, dtype=float) / config.bandwidth * math.log(2.0))
    out = b * np.square(distance) * gain / config.outage_factor
    return float(out) if np.ndim(out) == 0 else out


def outage_link_power_sensor(a, distance, config: ScenarioConfig):
    out = a * np.square(distance) * config.sensor_rate_gain / config.outage_factor
    return float(out) if np.ndim(out) == 0 else out


def ergodic_link_power_ap(b, distance, flow, config: ScenarioConfig):
    """b d^2 / U^{-1}(F / (B log2 e)); zero flow costs nothing."""
    y = np.asarray(flow, dtype=float) / config.ergodic_unit
    out = b * np.square(distance) * inv_u_recip(y)
    return float(out) if np.ndim(out) == 0 else out


def ergodic_link_power_sensor(a, distance, config: ScenarioConfig):
    out = a * np.square(distance) * inv_u_recip(config.rb / config.ergodic_unit)
    return float(out) if np.ndim(out) == 0 else out


def sensor_factor(mode: str, config: ScenarioConfig) -> float:
    """Multiplier k with sensor power = a * k * |p - w|^2 per sensor."""
    if mode == "pool":
        return config.sensor_rate_gain / config.outage_factor
    return float(inv_u_recip(config.rb / config.ergodic_unit))


def ap_link_powers(mode: str, b, d2, flows, config: ScenarioConfig):
    """Element-wise AP transmit power for squared distances ``d2``."""
    flows = np.asarray(flows, dtype=float)
    if mode == "pool":
        return b * d2 * np.expm1(flows / config.bandwidth * math.log(2.0)) / config.outage_factor
    return b * d2 * inv_u_recip(flows / config.ergodic_unit)


def evaluate(mode, deployment, stats: RegionStats, flows, config, coeffs):
    coeffs = coeffs or derive_coefficients(config)
    p = np.asarray(deployment.p, dtype=float)
    q = np.asarray(deployment.q, dtype=float)
    # parallel-axis form: sum mass |p - w|^2 = inertia + v |p - c|^2
    moment = stats.inertia + stats.vols * _d2(p, stats.cents)
    sensor = float(np.sum(coeffs.a * moment) * sensor_factor(mode, config))
    link_d2 = _d2(p[:, None, :], q[None, :, :])
    ap = float(np.sum(ap_link_powers(mode, coeffs.b, link_d2, flows, config)))
    return PowerBreakdown(sensor, ap, sensor + config.tradeoff * ap)


def d1_total(deployment: Deployment, stats: RegionStats, flows, config: ScenarioConfig,
             coeffs: LinkCoefficients = None) -> PowerBreakdown:
    """Outage-constrained power for a deployment, partition statistics and flows."""
    return evaluate("pool", deployment, stats, flows, config, coeffs)


def d2_total(deployment: Deployment, stats: RegionStats, flows, config: ScenarioConfig,
             coeffs: LinkCoefficients = None) -> PowerBreakdown:
    """Ergodic-capacity power for the same inputs."""
    return evaluate("peel", deployment, stats, flows, config, coeffs)


def total_for(mode, deployment, partition: Partition, grid: DensityGrid, flows, config,
              coeffs=None) -> PowerBreakdown:
    stats = partition.stats(grid, fallback=deployment.p)
    return evaluate(mode, deployment, stats, flows, config, coeffs)


def d2_upper(deployment: Deployment, flows, config: ScenarioConfig,
             coeffs: LinkCoefficients = None) -> float:
    """AP-side bound sum b d^2 (e^{2F/(B log2 e)} - 1) / 2."""
    coeffs = coeffs or derive_coefficients(config)
    p = np.asarray(deployment.p, dtype=float)
    q = np.asarray(deployment.q, dtype=float)
    link_d2 = _d2(p[:, None, :], q[None, :, :])
    y = np.asarray(flows, dtype=float) / (config.bandwidth * LOG2E)
    return float(np.sum(coeffs.b * link_d2 * np.expm1(2.0 * y) / 2.0))


def brute_sensor_power(mode, p, partition: Partition, grid: DensityGrid, config, coeffs=None):
    """Cell-by-cell sensor power, used to cross-check the moment form."""
    coeffs = coeffs or derive_coefficients(config)
    p = np.asarray(p, dtype=float)
    d2 = _d2(grid.centers, p[partition.owner])
    return float(np.sum(grid.mass * coeffs.a[partition.owner] * d2) * sensor_factor(mode, config))
