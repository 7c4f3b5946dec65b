"""Command-line entry points.

Subcommands: simulate (one scenario), train (build training set + fit
weights), evaluate (policy comparison over a scenario grid), full-info
(offline bound), generate (synthetic instance), calibrate (demand
distribution). Every run writes a manifest; metrics files are deterministic
given the manifest, wall-clock timings go to a separate file.
"""
from __future__ import annotations

import argparse
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np
import yaml

from .dataio import (
    DataError, ScenarioConfig, build_scenario, load_requests,
    load_scenario_config, place_fleet, policy_spec_from_dict, save_requests,
    write_csv, write_manifest,
)
from .demand import RebalancingGrid, RequestDistribution, calibrate_distribution
from .features import CB_SCHEMA, SB_SCHEMA, save_model
from .learning import TrainConfig, build_training_set, train
from .model import Objective
from .policies import PolicyKind, PolicySpec, full_information_bound
from .simulate import compare_policies, run_simulation
from .synth import SyntheticConfig, generate_synthetic
from .traveltime import TravelTimeProvider


def _load_yaml(path) -> dict:
    raw = yaml.safe_load(Path(path).read_text())
    if not isinstance(raw, dict):
        raise DataError(f"{path}: config must be a mapping")
    return raw


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _scenario_overrides(args) -> dict:
    overrides = {"seed": args.seed, "fleet_size": args.fleet,
                 "request_density": args.density}
    if args.policy:
        overrides["policy"] = {"kind": args.policy}
    return overrides


def cmd_simulate(args) -> int:
    cfg = load_scenario_config(args.config, _scenario_overrides(args))
    base = Path(args.config).parent
    scenario, tt, dist, grid = build_scenario(cfg, base)
    metrics = run_simulation(scenario, tt, dist, grid)
    out = _out_dir(args)
    write_csv(out / "metrics.csv", [metrics.to_row()])
    write_csv(out / "timings.csv",
              [{"epoch": i + 1, "decide_wall_s": s}
               for i, s in enumerate(metrics.decide_wall_s)])
    write_csv(out / "snapshots.csv",
              [{"epoch": e, "vehicle_id": v, "x": x, "y": y, "status": st}
               for e, v, x, y, st in metrics.snapshots])
    write_manifest(out, "simulate", cfg.to_dict(), cfg.seed)
    print(f"reward={metrics.total_reward:.6f} served={metrics.served} "
          f"of {metrics.offered} km={metrics.total_km:.3f}")
    return 0


def cmd_full_info(args) -> int:
    cfg = load_scenario_config(args.config, _scenario_overrides(args))
    base = Path(args.config).parent
    scenario, tt, _dist, _grid = build_scenario(cfg, base)
    requests = [r for b in scenario.batches for r in b]
    fi = full_information_bound(requests, scenario.fleet, scenario.objective, tt,
                                t_max_s=cfg.t_max_s, d_max_km=cfg.d_max_km,
                                period_s=cfg.period_s)
    out = _out_dir(args)
    write_csv(out / "fullinfo.csv", [{
        "label": scenario.label, "bound": fi.bound, "served": fi.served,
        "offered": len(requests), "service_km": fi.service_km,
        "deadhead_km": fi.deadhead_km,
    }])
    write_manifest(out, "full-info", cfg.to_dict(), cfg.seed)
    print(f"full-information bound: {fi.bound:.6f} (serves {fi.served}/{len(requests)})")
    return 0


def _evaluate_cell(config_path: str, overrides: dict, policy_dicts: list[dict]) -> list[dict]:
    cfg = load_scenario_config(config_path, overrides)
    base = Path(config_path).parent
    scenario, tt, dist, grid = build_scenario(cfg, base)
    specs = [policy_spec_from_dict(dict(p), base) for p in policy_dicts]
    specs = [replace(s, t_max_s=cfg.t_max_s, d_max_km=cfg.d_max_km) for s in specs]
    rows = compare_policies(scenario, specs, tt, dist, grid)
    for row in rows:
        row["request_density"] = cfg.request_density
    return rows


def cmd_evaluate(args) -> int:
    raw = _load_yaml(args.config)
    ev = raw.get("evaluate") or {}
    fleets = ev.get("fleets") or [raw.get("fleet_size")]
    densities = ev.get("densities") or [raw.get("request_density", 1.0)]
    policy_dicts = ev.get("policies") or [
        {"kind": "greedy"}, {"kind": "full_information"}]
    jobs = []
    for fleet in fleets:
        for density in densities:
            overrides = _scenario_overrides(args)
            overrides["fleet_size"] = overrides.get("fleet_size") or fleet
            overrides["request_density"] = overrides.get("request_density") or density
            jobs.append((str(args.config), overrides, policy_dicts))

    workers = int(os.environ.get("AMOD_WORKERS", "1"))
    rows: list[dict] = []
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for result in pool.map(_evaluate_cell, *zip(*jobs)):
                rows.extend(result)
    else:
        for job in jobs:
            rows.extend(_evaluate_cell(*job))
    out = _out_dir(args)
    write_csv(out / "comparison.csv", rows)
    write_manifest(out, "evaluate",
                   {"scenario": raw, "fleets": fleets, "densities": densities},
                   args.seed or 0)
    print(f"wrote {len(rows)} comparison rows to {out / 'comparison.csv'}")
    return 0


def cmd_generate(args) -> int:
    raw = _load_yaml(args.config)
    syn = raw.get("synthetic") or {}
    cfg = SyntheticConfig(**syn)
    seed = args.seed if args.seed is not None else int(raw.get("seed", 0))
    requests, tt, _grid = generate_synthetic(cfg, seed)
    out = _out_dir(args)
    save_requests(out / "requests.csv", requests)
    tt.save(out / "traveltime.npz")
    write_manifest(out, "generate", {"synthetic": syn, "seed": seed}, seed)
    if not requests:
        print("warning: zero total demand, wrote an empty request file")
    print(f"generated {len(requests)} requests")
    return 0


def cmd_calibrate(args) -> int:
    raw = _load_yaml(args.config)
    base = Path(args.config).parent
    tt = TravelTimeProvider.load(base / raw["traveltime_file"])
    cell_m = float((raw.get("grid") or {}).get("cell_m", 500.0))
    grid = RebalancingGrid(*tt.bbox, cell_w=cell_m, cell_h=cell_m)
    period_s = float(raw.get("period_s", 60.0))
    day_length_s = float(raw["day_length_s"])
    horizon = int(math.ceil(day_length_s / period_s))
    objective = Objective.profit()
    days = []
    for fname in raw["requests_files"]:
        batches, _ = load_requests(base / fname, 1.0, 0, objective, tt,
                                   period_s, horizon)
        days.append([r for b in batches for r in b])
    dist = calibrate_distribution(days, grid, float(raw.get("bin_width_s", 300.0)))
    out = _out_dir(args)
    dist.save(out / "distribution.npz")
    write_manifest(out, "calibrate", raw, args.seed or 0)
    print(f"calibrated {len(days)} days "
          f"({dist.n_rejected} requests rejected outside the grid)")
    return 0


def cmd_train(args) -> int:
    raw = _load_yaml(args.config)
    base = Path(args.config).parent
    tt = TravelTimeProvider.load(base / raw["traveltime_file"])
    cell_m = float((raw.get("grid") or {}).get("cell_m", 500.0))
    grid = RebalancingGrid(*tt.bbox, cell_w=cell_m, cell_h=cell_m)
    period_s = float(raw.get("period_s", 60.0))
    day_length_s = float(raw["day_length_s"])
    horizon = int(math.ceil(day_length_s / period_s))
    density = args.density or float(raw.get("request_density", 1.0))
    seed = args.seed if args.seed is not None else int(raw.get("seed", 0))
    objective = (Objective.profit() if raw.get("objective", "profit") == "profit"
                 else Objective.satisfied_customers())

    days = []
    for fname in raw["requests_files"]:
        batches, _ = load_requests(base / fname, density, seed, objective, tt,
                                   period_s, horizon)
        days.append([r for b in batches for r in b])

    if raw.get("distribution_file"):
        dist = RequestDistribution.load(base / raw["distribution_file"])
    else:
        dist = calibrate_distribution(days, grid, float(raw.get("bin_width_s", 300.0)))

    variant = dict(raw.get("variant") or {"kind": "sample_based"})
    spec = policy_spec_from_dict(variant, base)
    if spec.kind not in (PolicyKind.SAMPLE_BASED, PolicyKind.CELL_BASED):
        raise DataError("variant.kind must be sample_based or cell_based")
    fleet_size = args.fleet or int(raw["fleet_size"])
    fleet = place_fleet(fleet_size, days[0], seed, tt.bbox,
                        float(raw.get("placement_warmup_s", 600.0)))

    instances = build_training_set(
        days, fleet, objective, spec, tt, dist, grid, day_length_s,
        warmup_s=float(raw.get("warmup_s", 1800.0)),
        cooldown_s=float(raw.get("cooldown_s", 1800.0)),
        extraction_period_s=float(raw.get("extraction_period_s", 225.0)),
        period_s=period_s, seed=seed)
    config = TrainConfig(
        m_samples=int(raw.get("m_samples", 50)), sigma=float(raw.get("sigma", 1.0)),
        max_iter=int(raw.get("max_iter", 100)), gtol=float(raw.get("gtol", 1e-6)),
        seed=seed, normalize=bool(raw.get(
            "normalize", spec.kind is PolicyKind.CELL_BASED)))
    schema = SB_SCHEMA if spec.kind is PolicyKind.SAMPLE_BASED else CB_SCHEMA
    model, trace = train(instances, config, schema)

    out = _out_dir(args)
    save_model(model, out / "model.json")
    write_csv(out / "trace.csv", trace)
    dist.save(out / "distribution.npz")
    write_manifest(out, "train", {**raw, "request_density": density}, seed)
    print(f"trained on {len(instances)} instances, "
          f"final loss {model.metadata['final_loss']:.6f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="amodfleet",
        description="Fleet dispatching and rebalancing: simulate, learn, evaluate.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, helptext in (
        ("simulate", cmd_simulate, "run one scenario"),
        ("train", cmd_train, "build a training set and fit arc-weight predictors"),
        ("evaluate", cmd_evaluate, "compare policies over a scenario grid"),
        ("full-info", cmd_full_info, "compute the full-information bound"),
        ("generate", cmd_generate, "emit a synthetic instance"),
        ("calibrate", cmd_calibrate, "calibrate the request distribution"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", required=True, help="YAML config file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--policy", default=None, help="override policy kind")
        p.add_argument("--fleet", type=int, default=None, help="override fleet size")
        p.add_argument("--density", type=float, default=None,
                       help="override request density")
        p.set_defaults(fn=fn)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (DataError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
