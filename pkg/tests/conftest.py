import numpy as np
import pytest

from amodfleet.demand import calibrate_distribution
from amodfleet.dataio import place_fleet
from amodfleet.model import Location, Objective, Request, SystemState, VehicleState
from amodfleet.synth import SyntheticConfig, generate_synthetic
from amodfleet.traveltime import TravelTimeProvider


@pytest.fixture(scope="session")
def tt_line():
    """Constant-speed straight-line provider, 30 km/h on a 5x5 km area."""
    return TravelTimeProvider.constant_speed((0.0, 0.0, 5000.0, 5000.0), speed_kmh=30.0)


@pytest.fixture()
def small_state(tt_line):
    """Two vehicles, two reachable requests, epoch 1."""
    vehicles = (
        VehicleState(0, Location(100.0, 100.0)),
        VehicleState(1, Location(4000.0, 4000.0)),
    )
    reqs = (
        Request(1, Location(150.0, 150.0), Location(1500.0, 500.0), 50.0, 300.0, 10.0),
        Request(2, Location(4050.0, 4050.0), Location(2000.0, 2000.0), 55.0, 400.0, 8.0),
    )
    return SystemState(epoch=1, period_s=60.0, batch=reqs, vehicles=vehicles)


@pytest.fixture(scope="session")
def toy_world():
    """A small seeded synthetic world shared by feature/learning/policy tests."""
    cfg = SyntheticConfig(width_m=3000.0, height_m=3000.0, cell_m=500.0,
                          duration_s=1800.0, requests_per_hour=240.0,
                          hot_cell_fraction=0.2, hot_share=0.8,
                          base_fare=5.0, speed_kmh=36.0)
    days = [generate_synthetic(cfg, seed=50 + i)[0] for i in range(2)]
    _, tt, grid = generate_synthetic(cfg, seed=50)
    dist = calibrate_distribution(days, grid, bin_width_s=300.0)
    fleet = place_fleet(12, days[0], seed=3, bbox=tt.bbox, warmup_s=600.0)
    return {"cfg": cfg, "days": days, "tt": tt, "grid": grid, "dist": dist,
            "fleet": fleet, "objective": Objective.profit(), "period_s": 60.0}
