"""File formats, scenario configuration and run manifests.

Request records are CSV (id, pickup_x, pickup_y, dropoff_x, dropoff_y,
start_time_s, revenue). Scenario configuration is YAML. Every CLI run writes a
manifest (config hash, seeds, version) sufficient to reproduce it exactly, so
all emitted numbers are formatted with repr for bit-exact round trips.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import yaml

from . import __version__
from .demand import RebalancingGrid, RequestDistribution
from .features import load_model
from .model import Location, Objective, ObjectiveMode, Request, VehicleState
from .policies import PolicyKind, PolicySpec
from .simulate import Scenario
from .traveltime import TravelTimeProvider

__all__ = [
    "DataError",
    "REQUEST_COLUMNS",
    "save_requests",
    "load_requests",
    "place_fleet",
    "ScenarioConfig",
    "load_scenario_config",
    "build_scenario",
    "write_manifest",
    "write_csv",
]

REQUEST_COLUMNS = ("id", "pickup_x", "pickup_y", "dropoff_x", "dropoff_y",
                   "start_time_s", "revenue")


class DataError(ValueError):
    pass


def save_requests(path, requests: Sequence[Request]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(REQUEST_COLUMNS)
        for r in requests:
            w.writerow([r.id, repr(float(r.origin.x)), repr(float(r.origin.y)),
                        repr(float(r.destination.x)), repr(float(r.destination.y)),
                        repr(float(r.start_time)), repr(float(r.reward))])


def load_requests(path, density: float, seed: int, objective: Objective, tt,
                  period_s: float, horizon: int
                  ) -> tuple[tuple[tuple[Request, ...], ...], dict]:
    """Parse, thin and batch a request record file.

    Rows are thinned by seeded Bernoulli coin flips in file order; arrival
    times come from the travel-time provider; rewards follow the objective
    (revenue column for profit, 1 per request for satisfied customers).
    Returns (per-epoch batches, stats).
    """
    if not (0.0 < density <= 1.0):
        raise DataError(f"density {density} outside (0, 1]")
    rng = np.random.default_rng(seed)
    x_min, y_min, x_max, y_max = tt.bbox
    kept: list[Request] = []
    n_rows = 0
    n_out_of_area = 0
    n_out_of_horizon = 0
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != list(REQUEST_COLUMNS):
            raise DataError(f"{path}: expected header {','.join(REQUEST_COLUMNS)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            n_rows += 1
            try:
                rid = int(row[0])
                px, py, dx, dy, s, revenue = (float(v) for v in row[1:7])
            except (ValueError, IndexError) as exc:
                raise DataError(f"{path}: malformed row at line {lineno}: {exc}") from exc
            if revenue < 0:
                raise DataError(f"{path}: negative revenue at line {lineno}")
            if rng.random() >= density:
                continue
            if not (x_min <= px < x_max and y_min <= py < y_max
                    and x_min <= dx < x_max and y_min <= dy < y_max):
                n_out_of_area += 1
                continue
            if not (0.0 <= s < horizon * period_s):
                n_out_of_horizon += 1
                continue
            origin = Location(px, py)
            dest = Location(dx, dy)
            sec, _km = tt.travel_time(origin, dest)
            reward = revenue if objective.mode is ObjectiveMode.PROFIT else 1.0
            kept.append(Request(rid, origin, dest, s, s + sec, reward))

    kept.sort(key=lambda r: (r.start_time, r.id))
    batches: list[list[Request]] = [[] for _ in range(horizon)]
    for r in kept:
        batches[int(r.start_time // period_s)].append(r)
    stats = {"rows": n_rows, "kept": len(kept), "out_of_area": n_out_of_area,
             "out_of_horizon": n_out_of_horizon}
    return tuple(tuple(b) for b in batches), stats


def place_fleet(n: int, requests: Sequence[Request], seed: int,
                bbox: tuple[float, float, float, float],
                warmup_s: float = 600.0) -> tuple[VehicleState, ...]:
    """Initial placement: uniform over request origins of the warmup window,
    falling back to uniform over the area when the window is empty."""
    rng = np.random.default_rng(seed)
    origins = [r.origin for r in requests if r.start_time < warmup_s]
    vehicles = []
    x_min, y_min, x_max, y_max = bbox
    for vid in range(n):
        if origins:
            loc = origins[int(rng.integers(0, len(origins)))]
            loc = Location(loc.x, loc.y)
        else:
            loc = Location(float(rng.uniform(x_min, x_max)),
                           float(rng.uniform(y_min, y_max)))
        vehicles.append(VehicleState(vid, loc))
    return tuple(vehicles)


# -- scenario configuration ------------------------------------------------------


@dataclass(frozen=True)
class ScenarioConfig:
    requests_file: str
    traveltime_file: str
    fleet_size: int
    horizon_epochs: int
    period_s: float = 60.0
    request_density: float = 1.0
    objective: str = "profit"
    cost_per_km: Optional[float] = None
    policy: dict = field(default_factory=lambda: {"kind": "greedy"})
    grid_cell_m: float = 500.0
    t_max_s: float = math.inf
    d_max_km: float = math.inf
    distribution_file: Optional[str] = None
    placement_warmup_s: float = 600.0
    seed: int = 0
    label: str = ""

    def objective_obj(self) -> Objective:
        if self.objective == "profit":
            return (Objective.profit() if self.cost_per_km is None
                    else Objective.profit(self.cost_per_km))
        if self.objective == "satisfied":
            return (Objective.satisfied_customers() if self.cost_per_km is None
                    else Objective.satisfied_customers(self.cost_per_km))
        raise DataError(f"unknown objective {self.objective!r}")

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["t_max_s"] = None if math.isinf(self.t_max_s) else self.t_max_s
        d["d_max_km"] = None if math.isinf(self.d_max_km) else self.d_max_km
        return d


def load_scenario_config(path, overrides: Optional[dict] = None) -> ScenarioConfig:
    raw = yaml.safe_load(Path(path).read_text())
    if not isinstance(raw, dict):
        raise DataError(f"{path}: scenario config must be a mapping")
    raw.pop("evaluate", None)  # grid section, consumed by the evaluate command
    spars = raw.pop("sparsification", {}) or {}
    raw.setdefault("t_max_s", spars.get("t_max_s", math.inf))
    raw.setdefault("d_max_km", spars.get("d_max_km", math.inf))
    grid = raw.pop("grid", {}) or {}
    raw.setdefault("grid_cell_m", grid.get("cell_m", 500.0))
    for key, value in (overrides or {}).items():
        if value is not None:
            raw[key] = value
    raw = {k: v for k, v in raw.items() if v is not None or k in ("cost_per_km",)}
    try:
        return ScenarioConfig(**raw)
    except TypeError as exc:
        raise DataError(f"{path}: {exc}") from exc


def policy_spec_from_dict(d: dict, base_dir: Path) -> PolicySpec:
    d = dict(d)
    kind = PolicyKind(d.pop("kind", "greedy"))
    model_file = d.pop("model_file", None)
    model = load_model(base_dir / model_file) if model_file else None
    allowed = {"horizon_s", "discount", "n_capacity", "t_max_s", "d_max_km"}
    unknown = set(d) - allowed
    if unknown:
        raise DataError(f"unknown policy options {sorted(unknown)}")
    return PolicySpec(kind=kind, model=model, **d)


def build_scenario(cfg: ScenarioConfig, base_dir) -> tuple[Scenario, TravelTimeProvider,
                                                           Optional[RequestDistribution],
                                                           RebalancingGrid]:
    """Resolve a config into a runnable scenario plus its runtime objects."""
    base = Path(base_dir)
    tt = TravelTimeProvider.load(base / cfg.traveltime_file)
    objective = cfg.objective_obj()
    policy = policy_spec_from_dict(dict(cfg.policy), base)
    if math.isfinite(cfg.t_max_s) or math.isfinite(cfg.d_max_km):
        policy = PolicySpec(**{**policy.__dict__,
                               "t_max_s": cfg.t_max_s, "d_max_km": cfg.d_max_km})
    batches, _stats = load_requests(base / cfg.requests_file, cfg.request_density,
                                    cfg.seed, objective, tt, cfg.period_s,
                                    cfg.horizon_epochs)
    all_requests = [r for b in batches for r in b]
    fleet = place_fleet(cfg.fleet_size, all_requests, cfg.seed, tt.bbox,
                        cfg.placement_warmup_s)
    grid = RebalancingGrid(*tt.bbox, cell_w=cfg.grid_cell_m, cell_h=cfg.grid_cell_m)
    dist = (RequestDistribution.load(base / cfg.distribution_file)
            if cfg.distribution_file else None)
    scenario = Scenario(batches=batches, fleet=fleet, period_s=cfg.period_s,
                        objective=objective, policy=policy, seed=cfg.seed,
                        label=cfg.label or Path(cfg.requests_file).stem)
    return scenario, tt, dist, grid


# -- outputs ---------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(float(v))
    return str(v)


def write_csv(path, rows: Sequence[dict]) -> None:
    rows = list(rows)
    if not rows:
        Path(path).write_text("")
        return
    cols = list(rows[0].keys())
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(cols)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in cols])


def write_manifest(out_dir, command: str, config: dict, seed: int) -> Path:
    """Reproducibility record: canonical config dump plus its hash. No
    timestamps, so reruns produce identical manifests."""
    canonical = json.dumps(config, sort_keys=True, default=str)
    manifest = {
        "command": command,
        "config": config,
        "config_sha256": hashlib.sha256(canonical.encode()).hexdigest(),
        "seed": seed,
        "version": __version__,
    }
    path = Path(out_dir) / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str))
    return path
