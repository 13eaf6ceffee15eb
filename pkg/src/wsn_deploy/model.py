"""Scenario parameters, per-link physical coefficients and flow bookkeeping."""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import MISSING, dataclass, fields, replace
from typing import Optional

import numpy as np

log = logging.getLogger(__name__)

LOG2E = math.log2(math.e)
RATE_BANDWIDTH_WARN = 20.0


class ConfigError(ValueError):
    """Raised with the full list of violated constraints."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass(frozen=True)
class ScenarioConfig:
    """Full description of one network instance.

    ``region`` is a vertex list of a convex polygon (a rectangle is just four
    vertices). Sensor density is either uniform with ``sensor_count`` sensors
    in total, or given cell by cell in ``density_samples`` (sensors/m^2 at the
    centers of a ``grid`` x ``grid`` lattice over the region's bounding box,
    indexed ``[ix][iy]``).
    """

    region: tuple
    grid: int
    n_aps: int
    n_bss: int
    rb: float
    bandwidth: float
    noise_density: float
    carrier_wavelength: float
    ap_tx_gain: tuple
    ap_rx_gain: tuple
    ap_loss: tuple
    bs_rx_gain: tuple
    sensor_tx_gain: float = 1.0
    sensor_loss: float = 1.0
    sensor_count: Optional[float] = None
    density_samples: Optional[tuple] = None
    tradeoff: float = 0.25
    outage_eps: float = 0.01
    tau: float = 1e-4
    max_iters: int = 200
    seed: int = 0

    def with_(self, **changes) -> "ScenarioConfig":
        return replace(self, **changes)

    @property
    def vertices(self) -> np.ndarray:
        return np.asarray(self.region, dtype=float)

    @property
    def bbox(self):
        v = self.vertices
        return float(v[:, 0].min()), float(v[:, 1].min()), float(v[:, 0].max()), float(v[:, 1].max())

    @property
    def diameter(self) -> float:
        v = self.vertices
        d = v[:, None, :] - v[None, :, :]
        return float(np.sqrt((d ** 2).sum(-1)).max())

    @property
    def outage_factor(self) -> float:
        """ln(1 / (1 - eps))."""
        return -math.log1p(-self.outage_eps)

    @property
    def sensor_rate_gain(self) -> float:
        """2^{R_b/B} - 1."""
        return math.expm1(self.rb / self.bandwidth * math.log(2.0))

    @property
    def ergodic_unit(self) -> float:
        """B log2(e): converts a flow in bits/s into the argument of U^{-1}."""
        return self.bandwidth * LOG2E


@dataclass(frozen=True)
class LinkCoefficients:
    a: np.ndarray  # (N,) W/m^2, sensor -> AP n
    b: np.ndarray  # (N, M) W/m^2, AP n -> BS m


@dataclass(frozen=True)
class Deployment:
    p: np.ndarray  # (N, 2)
    q: np.ndarray  # (M, 2)


@dataclass(frozen=True)
class FlowMatrix:
    f: np.ndarray
    r: Optional[np.ndarray] = None
    degenerate: Optional[np.ndarray] = None


def _positive(values) -> bool:
    arr = np.asarray(values, dtype=float)
    return bool(arr.size) and bool(np.all(np.isfinite(arr))) and bool(np.all(arr > 0))


def _polygon_is_convex(v: np.ndarray) -> bool:
    if len(v) < 3:
        return False
    e1 = np.roll(v, -1, axis=0) - v
    e2 = np.roll(v, -2, axis=0) - np.roll(v, -1, axis=0)
    cross = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    return bool(np.all(cross > 0) or np.all(cross < 0))


def validate_config(config: ScenarioConfig) -> list[str]:
    """Every violated constraint, in a stable order. Empty list means valid."""
    errors = []
    try:
        v = config.vertices
        if v.ndim != 2 or v.shape[1] != 2 or not _polygon_is_convex(v):
            errors.append("region must be a convex polygon given as >= 3 vertices")
    except (TypeError, ValueError):
        errors.append("region must be a convex polygon given as >= 3 vertices")
    if not isinstance(config.grid, int) or config.grid < 2:
        errors.append("grid must be an integer >= 2")
    if not isinstance(config.n_aps, int) or config.n_aps < 1:
        errors.append("n_aps must be an integer >= 1")
    if not isinstance(config.n_bss, int) or config.n_bss < 1:
        errors.append("n_bss must be an integer >= 1")
    for name in ("rb", "bandwidth", "noise_density", "carrier_wavelength",
                 "sensor_tx_gain", "sensor_loss"):
        if not _positive([getattr(config, name)]):
            errors.append(f"{name} must be strictly positive")
    for name, expected in (("ap_tx_gain", config.n_aps), ("ap_rx_gain", config.n_aps),
                           ("ap_loss", config.n_aps), ("bs_rx_gain", config.n_bss)):
        values = getattr(config, name)
        if values is None or len(values) != expected:
            errors.append(f"{name} must have one entry per node ({expected})")
        elif not _positive(values):
            errors.append(f"{name} entries must be strictly positive")
    if not (0.0 < config.outage_eps < 1.0):
        errors.append("outage_eps out of range (0, 1)")
    if not (config.tradeoff >= 0 and math.isfinite(config.tradeoff)):
        errors.append("tradeoff must be >= 0")
    if not (config.tau > 0):
        errors.append("tau must be > 0")
    if not isinstance(config.max_iters, int) or config.max_iters < 1:
        errors.append("max_iters must be an integer >= 1")
    if config.density_samples is None:
        if config.sensor_count is None or not (config.sensor_count > 0):
            errors.append("sensor_count must be > 0 for uniform density")
    else:
        if config.sensor_count is not None:
            errors.append("give either sensor_count or density_samples, not both")
        d = np.asarray(config.density_samples, dtype=float)
        if isinstance(config.grid, int) and d.shape != (config.grid, config.grid):
            errors.append("density_samples must be a grid x grid array")
        elif np.any(~np.isfinite(d)) or np.any(d < 0):
            errors.append("density must be nonnegative everywhere")
        elif not d.sum() > 0:
            errors.append("density must have a positive total integral")
    if not errors and config.rb / config.bandwidth > RATE_BANDWIDTH_WARN:
        log.warning("R_b/B = %.3g exceeds %g; outage powers grow as 2^(R_b/B)",
                    config.rb / config.bandwidth, RATE_BANDWIDTH_WARN)
    return errors


def check_config(config: ScenarioConfig) -> ScenarioConfig:
    errors = validate_config(config)
    if errors:
        raise ConfigError(errors)
    return config


def derive_coefficients(config: ScenarioConfig) -> LinkCoefficients:
    """a_n and b_{n,m}: the distance-squared-normalised receive-side constants."""
    gains = [config.sensor_tx_gain, config.sensor_loss, *config.ap_tx_gain,
             *config.ap_rx_gain, *config.ap_loss, *config.bs_rx_gain]
    if not _positive(gains):
        raise ValueError("gains and losses must be strictly positive")
    base = (config.noise_density * config.bandwidth * (4.0 * math.pi) ** 2
            / config.carrier_wavelength ** 2)
    g_rn = np.asarray(config.ap_rx_gain, dtype=float)
    g_tn = np.asarray(config.ap_tx_gain, dtype=float)
    l_n = np.asarray(config.ap_loss, dtype=float)
    g_rm = np.asarray(config.bs_rx_gain, dtype=float)
    a = base * config.sensor_loss / (config.sensor_tx_gain * g_rn)
    b = base * l_n[:, None] / (g_tn[:, None] * g_rm[None, :])
    a.setflags(write=False)
    b.setflags(write=False)
    return LinkCoefficients(a=a, b=b)


def normalized_flow(flows) -> FlowMatrix:
    """Row-normalise a flow matrix. Zero rows are flagged degenerate with r = 0."""
    f = np.asarray(flows.f if isinstance(flows, FlowMatrix) else flows, dtype=float)
    if np.any(f < 0):
        raise ValueError("negative flow")
    rows = f.sum(axis=1)
    degenerate = rows <= 0
    r = np.zeros_like(f)
    ok = ~degenerate
    r[ok] = f[ok] / rows[ok, None]
    return FlowMatrix(f=f, r=r, degenerate=degenerate)


def reference_scenario(grid: int = 100, tradeoff: float = 0.25, **overrides) -> ScenarioConfig:
    """15 APs, 3 BSs, 1000 uniform sensors on a 10 km x 10 km square."""
    s1 = {1, 2, 3, 4, 8, 9, 10}
    s2 = {1, 2, 5, 6, 8, 9, 12, 13}
    s3 = {1, 2}
    n_aps, n_bss = 15, 3
    cfg = ScenarioConfig(
        region=((0.0, 0.0), (10_000.0, 0.0), (10_000.0, 10_000.0), (0.0, 10_000.0)),
        grid=grid,
        n_aps=n_aps,
        n_bss=n_bss,
        rb=30e3,
        bandwidth=500e3,
        noise_density=2e-17,
        carrier_wavelength=3.0,
        ap_tx_gain=tuple(2.0 if n in s1 else 4.0 for n in range(1, n_aps + 1)),
        ap_rx_gain=tuple(2.0 if n in s2 else 4.0 for n in range(1, n_aps + 1)),
        ap_loss=(1.0,) * n_aps,
        bs_rx_gain=tuple(2.0 if m in s3 else 4.0 for m in range(1, n_bss + 1)),
        sensor_tx_gain=1.0,
        sensor_loss=1.0,
        sensor_count=1000.0,
        tradeoff=tradeoff,
        outage_eps=0.01,
    )
    return replace(cfg, **overrides)


# --- structured-text (JSON) form -------------------------------------------

_UNIT_NAMES = {
    "rb": "rb_bps",
    "bandwidth": "bandwidth_hz",
    "noise_density": "noise_density_w_per_hz",
    "carrier_wavelength": "carrier_wavelength_m",
    "region": "region_vertices_m",
    "density_samples": "density_samples_per_m2",
    "tradeoff": "tradeoff_lambda",
}
_FROM_UNIT = {v: k for k, v in _UNIT_NAMES.items()}
_TUPLE_FIELDS = ("ap_tx_gain", "ap_rx_gain", "ap_loss", "bs_rx_gain")


def config_to_dict(config: ScenarioConfig) -> dict:
    out = {}
    for f in fields(config):
        value = getattr(config, f.name)
        if value is None:
            continue
        if isinstance(value, tuple):
            value = json.loads(json.dumps(value))
        out[_UNIT_NAMES.get(f.name, f.name)] = value
    return out


def _tupleize(value):
    if isinstance(value, (list, tuple)):
        return tuple(_tupleize(v) for v in value)
    return value


def config_from_dict(data: dict) -> ScenarioConfig:
    """Build a config from its JSON form; raises ConfigError listing every problem."""
    data = dict(data)
    errors = []
    if "region_rect_m" in data:
        rect = data.pop("region_rect_m")
        try:
            x0, y0, x1, y1 = (float(v) for v in rect)
            data["region_vertices_m"] = [[x0, y0], [x1, y0], [x1, y1], [x0, y1]]
        except (TypeError, ValueError):
            errors.append("region_rect_m must be [xmin, ymin, xmax, ymax]")
    known = {f.name for f in fields(ScenarioConfig)}
    kwargs = {}
    for key, value in data.items():
        name = _FROM_UNIT.get(key, key)
        if name not in known:
            errors.append(f"unknown config key '{key}'")
            continue
        kwargs[name] = _tupleize(value)
    required = [f.name for f in fields(ScenarioConfig) if f.default is MISSING]
    for name in required:
        if name not in kwargs:
            errors.append(f"missing config key '{_UNIT_NAMES.get(name, name)}'")
    if errors:
        raise ConfigError(errors)
    for name in _TUPLE_FIELDS:
        if not isinstance(kwargs[name], tuple):
            kwargs[name] = (kwargs[name],)
    config = ScenarioConfig(**kwargs)
    return check_config(config)


def load_config(path) -> ScenarioConfig:
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError([f"malformed config: {exc}"]) from exc
    if not isinstance(data, dict):
        raise ConfigError(["config document must be a JSON object"])
    return config_from_dict(data)


def dump_config(config: ScenarioConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config_to_dict(config), fh, indent=2, sort_keys=True)
        fh.write("\n")


def config_hash(config: ScenarioConfig) -> str:
    blob = json.dumps(config_to_dict(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()
