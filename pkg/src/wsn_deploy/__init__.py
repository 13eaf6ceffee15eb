"""Energy-minimal deployment, partitioning and routing for two-tier sensor networks."""

from .field import (DensityGrid, Partition, RegionStats, build_grid, neighbors, region_stats,
                    split_union, weighted_voronoi_assign)
from .model import (ConfigError, Deployment, FlowMatrix, LinkCoefficients, ScenarioConfig,
                    derive_coefficients, load_config, normalized_flow, reference_scenario,
                    validate_config)
from .numerics import (RootSolveSettings, bisect_root, d_inv_u_recip, exp_integral_e1, u_inverse,
                       u_of)
from .objective import PowerBreakdown, d1_total, d2_total, d2_upper
from .optimizer import OptimizationTrace, RunResult, peel_run, pool_run, run
from .routing import waterfill_ergodic, waterfill_outage

__version__ = "0.1.0"
