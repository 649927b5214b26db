"""Command-line entry point.

Subcommands: generate | fit | predict | render | simulate | report | amdahl.
Every subcommand is deterministic given its flags; all randomness flows
from --seed (or the STIXELFLOW_SEED environment variable, with the flag
winning). Exit codes: 0 success, 1 runtime/domain error, 2 usage error.
"""

from __future__ import annotations

import argparse
import os
import sys

from . import costs, market, render, synth
from .domain import DomainBox, StixelflowError
from .engine import DirectoryCheckpointStore, always_on_fleet, fit_with_pipeline, plan_tasks
from .ensemble import (
    GridPrediction,
    load_ensemble,
    predict_grid,
    read_predictions,
    write_ensemble,
    write_predictions,
)
from .domain import GeoPoint
from .grids import StixelConfig, build_grids
from .learner import LogisticGD

SEED_ENV_VAR = "STIXELFLOW_SEED"


def _default_seed() -> int:
    return int(os.environ.get(SEED_ENV_VAR, "0"))


def _add_domain_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--lat-min", type=float, default=0.0)
    p.add_argument("--lat-max", type=float, default=100.0)
    p.add_argument("--lon-min", type=float, default=0.0)
    p.add_argument("--lon-max", type=float, default=100.0)


def _domain_from(args) -> DomainBox:
    return DomainBox(lat_min=args.lat_min, lat_max=args.lat_max,
                     lon_min=args.lon_min, lon_max=args.lon_max)


def _add_stixel_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--cell-width", type=float, default=10.0,
                   help="stixel cell width in degrees longitude")
    p.add_argument("--cell-height", type=float, default=10.0,
                   help="stixel cell height in degrees latitude")
    p.add_argument("--window-weeks", type=int, default=4)
    p.add_argument("--layers", type=int, default=10,
                   help="number of offset grid layers (ensemble size)")
    p.add_argument("--min-train", type=int, default=10)


def _add_learner_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--iterations", type=int, default=200)
    p.add_argument("--step", type=float, default=0.1)
    p.add_argument("--l2", type=float, default=0.001)


def _stixel_config(args) -> StixelConfig:
    return StixelConfig(
        cell_width_deg=args.cell_width,
        cell_height_deg=args.cell_height,
        window_weeks=args.window_weeks,
        layers=args.layers,
        min_train=args.min_train,
        seed=args.seed,
    )


def _learner_from(args) -> LogisticGD:
    return LogisticGD(iterations=args.iterations, step=args.step, l2=args.l2)


def parse_weeks(spec: str) -> list[int]:
    """`A..B` inclusive, or a single week number."""
    if ".." in spec:
        a_text, _, b_text = spec.partition("..")
        a, b = int(a_text), int(b_text)
    else:
        a = b = int(spec)
    if not (1 <= a <= 52 and 1 <= b <= 52 and a <= b):
        raise StixelflowError(f"bad week range {spec!r}")
    return list(range(a, b + 1))


# ---------------------------------------------------------------------------
# subcommands

def cmd_generate(args) -> int:
    domain = _domain_from(args)
    world = synth.generate_world(args.seed, domain, args.dim)
    observations = synth.sample_observations(world, args.n_obs, args.seed,
                                             species=args.species)
    synth.write_observations(observations, args.out, dim=args.dim)
    world_out = args.world_out
    if world_out is None:
        world_out = os.path.join(os.path.dirname(os.path.abspath(args.out)),
                                 "world.cfg")
    synth.write_world_config(world, world_out)
    print(f"wrote {len(observations)} observations to {args.out}")
    print(f"wrote world config to {world_out}")
    return 0


def cmd_fit(args) -> int:
    domain = _domain_from(args)
    observations = synth.read_observations(args.obs, domain)
    config = _stixel_config(args)
    os.makedirs(args.out_dir, exist_ok=True)
    store = DirectoryCheckpointStore(os.path.join(args.out_dir, "checkpoints"))
    fleet = always_on_fleet(args.workers)
    ensemble, record = fit_with_pipeline(
        observations, config, domain, learner=_learner_from(args),
        fleet=fleet, store=store)
    ensemble_path = os.path.join(args.out_dir, "ensemble.json")
    write_ensemble(ensemble, ensemble_path)
    print(f"n_stixels={ensemble.grids.n_stixels()}")
    print(f"n_models={len(ensemble.models)}")
    print(f"core_hours={record.core_hours:.4f}")
    print(f"wrote ensemble to {ensemble_path}")
    return 0


def cmd_predict(args) -> int:
    ensemble = load_ensemble(args.ensemble)
    world = synth.load_world(args.world)
    domain = ensemble.grids.domain
    if world.domain != domain:
        raise StixelflowError(
            "world domain does not match the fitted ensemble's domain")
    lat_lo = args.lat_min if args.lat_min is not None else domain.lat_min
    lat_hi = args.lat_max if args.lat_max is not None else domain.lat_max
    lon_lo = args.lon_min if args.lon_min is not None else domain.lon_min
    lon_hi = args.lon_max if args.lon_max is not None else domain.lon_max
    if (lat_lo < domain.lat_min or lat_hi > domain.lat_max
            or lon_lo < domain.lon_min or lon_hi > domain.lon_max):
        raise StixelflowError("requested grid extends outside the fitted domain")
    res = args.grid_res
    if res < 1:
        raise StixelflowError(f"grid resolution must be >= 1, got {res}")
    lats = [lat_lo + (i + 0.5) * (lat_hi - lat_lo) / res for i in range(res)]
    lons = [lon_lo + (j + 0.5) * (lon_hi - lon_lo) / res for j in range(res)]
    points = [(lat, lon) for lat in lats for lon in lons]
    env = world.env_at([p[0] for p in points], [p[1] for p in points])
    points_with_env = [
        (GeoPoint(lat, lon), tuple(float(v) for v in env[i]))
        for i, (lat, lon) in enumerate(points)
    ]
    weeks = parse_weeks(args.weeks)
    rows = predict_grid(ensemble, points_with_env, weeks)
    write_predictions(rows, args.out)
    print(f"wrote {len(rows)} predictions to {args.out}")
    return 0


def cmd_render(args) -> int:
    rows = read_predictions(args.preds)
    render.render_predictions(rows, args.week, args.out)
    print(f"wrote map for week {args.week} to {args.out}")
    return 0


def cmd_simulate(args) -> int:
    domain = _domain_from(args)
    observations = synth.read_observations(args.obs, domain)
    config = _stixel_config(args)
    tasks = plan_tasks(observations, config, domain)
    grids = build_grids(config, domain)
    by_id = {o.id: o for o in observations}
    if args.trace:
        trace = market.load_price_trace(args.trace)
    else:
        trace = market.gen_price_trace(
            seed=args.seed,
            mean=args.trace_mean,
            volatility=args.trace_volatility,
            spike_rate=args.trace_spike_rate,
            horizon_s=args.trace_horizon_days * 86400.0,
        )
    fleet = market.FleetSpec(
        n_spot_workers=args.spot_workers,
        n_dedicated=args.dedicated,
        cores_per_instance=args.cores,
        on_demand_rate=args.on_demand_rate,
        orchestration_fee=args.fee,
    )
    result = market.simulate_cluster(
        trace, market.BidPolicy(args.bid), fleet, tasks, by_id, grids,
        _learner_from(args))
    os.makedirs(args.out_dir, exist_ok=True)
    events_path = os.path.join(args.out_dir, "events.csv")
    billing_path = os.path.join(args.out_dir, "billing.csv")
    market.write_event_log(result.events, events_path)
    market.write_billing(result.billing, billing_path)
    record = result.record
    print(f"n_tasks={record.n_tasks}")
    print(f"n_attempts={record.n_attempts}")
    print(f"n_preemptions={record.n_preemptions}")
    print(f"core_hours={record.core_hours:.4f}")
    print(f"wall_hours={record.wall_hours:.4f}")
    print(f"total_cost_usd={result.total_cost:.2f}")
    print(f"wrote event log to {events_path}")
    print(f"wrote billing to {billing_path}")
    return 0


def cmd_report(args) -> int:
    if args.profiles:
        profiles = costs.read_profiles(args.profiles)
    else:
        profiles = costs.default_profiles()
    report = costs.compare_profiles(profiles, args.core_hours, args.n_species)
    if args.out:
        costs.write_report(report, args.out)
    print(costs.render_report_table(report))
    return 0


def cmd_amdahl(args) -> int:
    improvement = costs.amdahl(args.fraction, args.factor)
    print(f"{improvement:.4f}")
    return 0


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stixelflow",
        description="Spatiotemporal ensemble fitting, spot-market simulation "
                    "and deployment cost reporting.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate a synthetic observation set")
    p.add_argument("--seed", type=int, default=_default_seed())
    p.add_argument("--n-obs", type=int, default=20000)
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--species", default="sp-001")
    p.add_argument("--out", required=True, help="observation CSV path")
    p.add_argument("--world-out", default=None, help="world.cfg path")
    _add_domain_flags(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("fit", help="fit the stixel ensemble for one species")
    p.add_argument("--seed", type=int, default=_default_seed())
    p.add_argument("--obs", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--workers", type=int, default=1)
    _add_stixel_flags(p)
    _add_learner_flags(p)
    _add_domain_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="predict occurrence on a regular grid")
    p.add_argument("--seed", type=int, default=_default_seed())
    p.add_argument("--ensemble", required=True)
    p.add_argument("--world", required=True,
                   help="world.cfg supplying covariates at grid points")
    p.add_argument("--grid-res", type=int, default=20)
    p.add_argument("--weeks", default="1..52")
    p.add_argument("--out", required=True)
    p.add_argument("--lat-min", type=float, default=None)
    p.add_argument("--lat-max", type=float, default=None)
    p.add_argument("--lon-min", type=float, default=None)
    p.add_argument("--lon-max", type=float, default=None)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("render", help="render one week as a PGM map")
    p.add_argument("--preds", required=True)
    p.add_argument("--week", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("simulate", help="run the fit on a simulated spot market")
    p.add_argument("--seed", type=int, default=_default_seed())
    p.add_argument("--obs", required=True, help="observation CSV to plan tasks from")
    p.add_argument("--bid", type=float, required=True)
    p.add_argument("--trace", default=None, help="price trace CSV (t_seconds,price)")
    p.add_argument("--trace-mean", type=float, default=0.13)
    p.add_argument("--trace-volatility", type=float, default=0.05)
    p.add_argument("--trace-spike-rate", type=float, default=0.01)
    p.add_argument("--trace-horizon-days", type=float, default=30.0)
    p.add_argument("--spot-workers", type=int, default=4)
    p.add_argument("--dedicated", type=int, default=1)
    p.add_argument("--cores", type=int, default=16)
    p.add_argument("--on-demand-rate", type=float, default=0.80)
    p.add_argument("--fee", type=float, default=0.0)
    p.add_argument("--out-dir", required=True)
    _add_stixel_flags(p)
    _add_learner_flags(p)
    _add_domain_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", help="compare deployment costs")
    p.add_argument("--profiles", default=None,
                   help="profiles CSV; defaults to the shipped paper profiles")
    p.add_argument("--core-hours", type=float, default=costs.DEFAULT_CORE_HOURS)
    p.add_argument("--n-species", type=int, default=costs.DEFAULT_N_SPECIES)
    p.add_argument("--out", default=None, help="report CSV path")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("amdahl", help="overall improvement from a partial speedup")
    p.add_argument("--fraction", type=float, required=True)
    p.add_argument("--factor", type=float, required=True)
    p.set_defaults(func=cmd_amdahl)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (StixelflowError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
