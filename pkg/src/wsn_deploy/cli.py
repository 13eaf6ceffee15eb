"""Command-line entry point.

Scenario config (JSON object, units in the key names)::

    region_vertices_m         [[x, y], ...] convex polygon, or
    region_rect_m             [xmin, ymin, xmax, ymax]
    grid                      cells per axis (>= 2)
    n_aps, n_bss              node counts
    rb_bps                    sensor bit rate
    bandwidth_hz              channel bandwidth
    noise_density_w_per_hz    noise spectral density
    carrier_wavelength_m      carrier wavelength
    ap_tx_gain, ap_rx_gain, ap_loss   one entry per AP
    bs_rx_gain                one entry per BS
    sensor_tx_gain, sensor_loss       optional, default 1
    sensor_count              total sensors for uniform density, or
    density_samples_per_m2    grid x grid array indexed [ix][iy]
    tradeoff_lambda           AP power weight (default 0.25)
    outage_eps                outage probability (default 0.01)
    tau, max_iters, seed      loop controls

Exit codes: 0 success/converged, 1 bad input, 2 hit max_iters, 3 failed
verification.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import oracle, plotting
from .field import Partition, build_grid, export_partition_csv, weighted_voronoi_assign
from .model import (ConfigError, Deployment, config_hash, config_to_dict, derive_coefficients,
                    load_config, reference_scenario)
from .objective import PowerBreakdown, total_for
from .optimizer import clone_state, initial_state, run

log = logging.getLogger("wsn_deploy")

EXIT_OK, EXIT_INPUT, EXIT_MAX_ITERS, EXIT_VERIFY = 0, 1, 2, 3
OBJECTIVE_MODE = {"d1": "pool", "d2": "peel"}


def _dbm(watts: float) -> float:
    return 10.0 * math.log10(watts * 1e3) if watts > 0 else -math.inf


def power_dict(bd: PowerBreakdown) -> dict:
    out = {}
    for key, value in (("sensor", bd.sensor_power), ("ap", bd.ap_power),
                       ("weighted_total", bd.weighted_total)):
        out[f"{key}_w"] = value
        out[f"{key}_mw"] = value * 1e3
        out[f"{key}_dbm"] = _dbm(value)
    return out


def result_document(config, result, wall_time, sweep=None) -> dict:
    state = result.state
    doc = {
        "algorithm": result.algorithm,
        "config_hash": config_hash(config),
        "seed": result.seed,
        "status": result.trace.status,
        "iterations": result.iterations,
        "power": power_dict(result.breakdown),
        "ap_positions_m": state.p.tolist(),
        "bs_positions_m": state.q.tolist(),
        "flows_bps": state.flows.tolist(),
        "region_volumes": state.vols.tolist(),
        "partition_owner": state.partition.owner.tolist(),
        "defects": list(result.trace.defects),
        "wall_time_s": wall_time,
    }
    if sweep is not None:
        doc["seed_sweep"] = sweep
    return doc


def _write_json(path, doc):
    text = json.dumps(doc, indent=2, sort_keys=True, allow_nan=True) + "\n"
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)


def parse_seed_range(text: str) -> list[int]:
    """'3..7' -> [3, 4, 5, 6, 7]; a single integer is a one-seed range."""
    if ".." in text:
        a, b = text.split("..", 1)
        lo, hi = int(a), int(b)
    else:
        lo = hi = int(text)
    if hi < lo:
        raise argparse.ArgumentTypeError(f"empty seed range {text!r}")
    return list(range(lo, hi + 1))


def _timed_run(args):
    config, algorithm, seed = args
    t0 = time.perf_counter()
    res = run(config, algorithm, seed)
    return res, time.perf_counter() - t0


def _print_errors(errors):
    for e in errors:
        print(f"config error: {e}", file=sys.stderr)


def cmd_optimize(args) -> int:
    try:
        config = load_config(args.config)
    except ConfigError as exc:
        _print_errors(exc.errors)
        return EXIT_INPUT
    except OSError as exc:
        _print_errors([str(exc)])
        return EXIT_INPUT
    seeds = args.seed_sweep or [config.seed if args.seed is None else args.seed]
    jobs = [(config, args.algorithm, s) for s in seeds]
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            outcomes = list(pool.map(_timed_run, jobs))
    else:
        outcomes = [_timed_run(j) for j in jobs]
    sweep = None
    if args.seed_sweep:
        sweep = [{"seed": r.seed, "weighted_total_w": r.breakdown.weighted_total,
                  "status": r.trace.status, "iterations": r.iterations} for r, _ in outcomes]
    best, wall = min(outcomes, key=lambda o: o[0].breakdown.weighted_total)
    _write_json(args.out, result_document(config, best, wall, sweep))
    state = best.state
    if args.trace:
        best.trace.write_csv(args.trace)
    if args.geometry:
        export_partition_csv(args.geometry, state.partition, state.grid, state.p, state.q)
    if args.figure:
        plotting.plot_deployment(args.figure, state.grid, state.partition.owner, state.p,
                                 state.q, state.flows, config.bbox,
                                 title=f"{args.algorithm.upper()} seed {best.seed}: "
                                       f"{best.breakdown.weighted_total * 1e3:.3f} mW")
    if best.trace.defects:
        log.warning("%d monotonicity defects recorded", len(best.trace.defects))
    return EXIT_OK if best.converged else EXIT_MAX_ITERS


def load_deployment(path, config):
    """Read positions, flows and (optionally) cell owners from a result document."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    p = np.asarray(doc["ap_positions_m"], dtype=float)
    q = np.asarray(doc["bs_positions_m"], dtype=float)
    flows = np.asarray(doc["flows_bps"], dtype=float)
    errors = []
    if p.shape != (config.n_aps, 2):
        errors.append(f"ap_positions_m has shape {p.shape}, expected ({config.n_aps}, 2)")
    if q.shape != (config.n_bss, 2):
        errors.append(f"bs_positions_m has shape {q.shape}, expected ({config.n_bss}, 2)")
    if flows.shape != (config.n_aps, config.n_bss):
        errors.append(f"flows_bps has shape {flows.shape}, "
                      f"expected ({config.n_aps}, {config.n_bss})")
    grid = build_grid(config)
    owner = doc.get("partition_owner")
    if owner is None:
        partition = None
    else:
        owner = np.asarray(owner, dtype=np.int64)
        if owner.shape != (grid.n_cells,):
            errors.append(f"partition_owner has {owner.size} cells, expected {grid.n_cells}")
        elif owner.size and (owner.min() < 0 or owner.max() >= config.n_aps):
            errors.append("partition_owner refers to a nonexistent AP")
        partition = Partition(owner=owner, n_aps=config.n_aps)
    if errors:
        raise ConfigError(errors)
    if partition is None:
        partition = weighted_voronoi_assign(p, derive_coefficients(config).a, grid)
    return Deployment(p=p, q=q), partition, grid, flows


def cmd_eval(args) -> int:
    try:
        config = load_config(args.config)
        deployment, partition, grid, flows = load_deployment(args.deployment, config)
    except ConfigError as exc:
        _print_errors(exc.errors)
        return EXIT_INPUT
    except (OSError, KeyError, ValueError) as exc:
        _print_errors([f"unreadable deployment: {exc}"])
        return EXIT_INPUT
    bd = total_for(OBJECTIVE_MODE[args.objective], deployment, partition, grid, flows, config)
    _write_json(args.out, {"objective": args.objective, "power": power_dict(bd)})
    return EXIT_OK


def cmd_verify(args) -> int:
    reports = oracle.run_suite(args.suite, seed=args.seed)
    failed = [r for r in reports if not r.passed]
    for r in reports:
        if args.all or not r.passed:
            print(r.line())
    print(f"{args.suite}: {len(reports) - len(failed)}/{len(reports)} passed")
    if args.out:
        _write_json(args.out, {"suite": args.suite, "seed": args.seed,
                               "reports": [r.as_dict() for r in reports]})
    return EXIT_OK if not failed else EXIT_VERIFY


def cmd_example_config(args) -> int:
    _write_json(args.out, config_to_dict(reference_scenario(grid=args.grid)))
    return EXIT_OK


def cmd_tradeoff(args) -> int:
    """Sweep the trade-off multiplier from one shared initialisation."""
    try:
        base = load_config(args.config)
    except (ConfigError, OSError) as exc:
        _print_errors(getattr(exc, "errors", [str(exc)]))
        return EXIT_INPUT
    lambdas = [float(v) for v in args.lambdas.split(",")]
    seed = base.seed if args.seed is None else args.seed
    state0, _ = initial_state(base, args.algorithm, seed)
    rows = []
    for lam in lambdas:
        cfg = base.with_(tradeoff=lam)
        res = run(cfg, args.algorithm, seed, state=clone_state(state0, config=cfg),
                  rng=np.random.default_rng(seed))
        bd = res.breakdown
        rows.append((lam, bd.sensor_power, bd.ap_power, bd.weighted_total, res.trace.status))
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["lambda", "sensor_w", "ap_w", "weighted_total_w", "status"])
        for row in rows:
            w.writerow([repr(row[0]), repr(row[1]), repr(row[2]), repr(row[3]), row[4]])
    if args.figure:
        plotting.plot_tradeoff(args.figure, lambdas, [r[1] for r in rows], [r[2] for r in rows],
                               title=f"{args.algorithm.upper()} AP/sensor trade-off")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wsn-deploy",
                                     description="Energy-minimal AP/BS deployment and routing.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("optimize", help="run POOL or PEEL on a scenario")
    p.add_argument("--config", required=True)
    p.add_argument("--algorithm", choices=("pool", "peel"), required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--seed-sweep", type=parse_seed_range, metavar="A..B",
                   help="run every seed in the range and keep the best")
    p.add_argument("--jobs", type=int, default=1, help="parallel processes for --seed-sweep")
    p.add_argument("--out", default="-", help="result document path (default stdout)")
    p.add_argument("--trace", help="trace CSV path")
    p.add_argument("--geometry", help="geometry CSV path")
    p.add_argument("--figure", help="deployment figure path (PNG/PDF)")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("eval", help="evaluate a stored deployment")
    p.add_argument("--config", required=True)
    p.add_argument("--deployment", required=True)
    p.add_argument("--objective", choices=("d1", "d2"), required=True)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("verify", help="run an oracle battery")
    p.add_argument("--suite", choices=("numerics", "routing", "boundary", "outage-mc"),
                   required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--all", action="store_true", help="print passing reports too")
    p.add_argument("--out", help="write reports as JSON")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("example-config", help="write the reference 15-AP scenario")
    p.add_argument("--out", default="-")
    p.add_argument("--grid", type=int, default=100)
    p.set_defaults(func=cmd_example_config)

    p = sub.add_parser("tradeoff", help="sweep the AP power weight")
    p.add_argument("--config", required=True)
    p.add_argument("--algorithm", choices=("pool", "peel"), required=True)
    p.add_argument("--lambdas", default="0,0.25,0.5,1")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="CSV path")
    p.add_argument("--figure", help="trade-off figure path")
    p.set_defaults(func=cmd_tradeoff)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
