"""Synthetic demand generator.

Produces request streams with spatial structure: a subset of hot cells emits
most of the demand while destinations follow a distance-discounted gravity
pull toward all cells, so vehicles drift away from demand and rebalancing has
signal. Travel times are straight-line at constant speed, which keeps the
triangle inequality exact.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .demand import RebalancingGrid
from .model import Location, Request
from .traveltime import TravelTimeProvider

__all__ = ["SyntheticConfig", "generate_synthetic"]


@dataclass(frozen=True)
class SyntheticConfig:
    width_m: float = 8000.0
    height_m: float = 8000.0
    cell_m: float = 500.0
    duration_s: float = 3600.0
    requests_per_hour: float = 300.0
    hot_cell_fraction: float = 0.2
    hot_share: float = 0.8            # fraction of demand emitted by hot cells
    gravity_scale_m: float = 3000.0   # destination pull decay length
    base_fare: float = 2.5
    fare_per_km: float = 1.5
    speed_kmh: float = 30.0

    def __post_init__(self):
        if not (0.0 < self.hot_cell_fraction <= 1.0 and 0.0 <= self.hot_share <= 1.0):
            raise ValueError("hot cell fraction in (0,1], hot share in [0,1]")
        if self.requests_per_hour < 0:
            raise ValueError("negative request rate")


def generate_synthetic(cfg: SyntheticConfig, seed: int
                       ) -> tuple[list[Request], TravelTimeProvider, RebalancingGrid]:
    """Seeded synthetic instance: requests (sorted by start time), a constant
    speed travel-time provider, and the matching rebalancing grid."""
    rng = np.random.default_rng(seed)
    bbox = (0.0, 0.0, cfg.width_m, cfg.height_m)
    grid = RebalancingGrid(*bbox, cell_w=cfg.cell_m, cell_h=cfg.cell_m)
    tt = TravelTimeProvider.constant_speed(bbox, speed_kmh=cfg.speed_kmh,
                                           cell_m=cfg.cell_m)
    n_cells = grid.n_cells
    n_hot = max(1, int(round(cfg.hot_cell_fraction * n_cells)))
    hot = rng.permutation(n_cells)[:n_hot]
    is_hot = np.zeros(n_cells, dtype=bool)
    is_hot[hot] = True

    total = cfg.requests_per_hour * cfg.duration_s / 3600.0
    rates = np.where(
        is_hot,
        cfg.hot_share * total / n_hot,
        (1.0 - cfg.hot_share) * total / max(1, n_cells - n_hot),
    )
    if n_cells == n_hot:
        rates = np.full(n_cells, total / n_cells)

    cx, cy = grid.cell_centers()
    requests: list[Request] = []
    draws: list[tuple[float, int]] = []  # (start time, origin cell)
    for c in range(n_cells):
        n = int(rng.poisson(rates[c]))
        for s in rng.uniform(0.0, cfg.duration_s, size=n):
            draws.append((float(s), c))
    draws.sort()

    for rid, (s, c) in enumerate(draws):
        ox = cx[c] + rng.uniform(-cfg.cell_m / 2, cfg.cell_m / 2)
        oy = cy[c] + rng.uniform(-cfg.cell_m / 2, cfg.cell_m / 2)
        d2 = np.hypot(cx - cx[c], cy - cy[c])
        pull = np.exp(-d2 / cfg.gravity_scale_m)
        pull[c] = 0.0  # force actual movement
        pull /= pull.sum()
        dest_cell = int(rng.choice(n_cells, p=pull))
        dx = cx[dest_cell] + rng.uniform(-cfg.cell_m / 2, cfg.cell_m / 2)
        dy = cy[dest_cell] + rng.uniform(-cfg.cell_m / 2, cfg.cell_m / 2)
        origin = Location(float(ox), float(oy))
        dest = Location(float(dx), float(dy))
        sec, km = tt.travel_time(origin, dest)
        requests.append(Request(
            id=rid, origin=origin, destination=dest, start_time=s,
            arrival_time=s + sec, reward=cfg.base_fare + cfg.fare_per_km * km))
    return requests, tt, grid
