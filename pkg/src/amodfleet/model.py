"""Domain types for centrally controlled ride-hailing fleets.

Time convention: decision epochs are integers 1..T. Epoch t covers the
continuous window [(t-1)*period_s, t*period_s); the controller decides at the
window start. Request/vehicle timestamps are continuous seconds on the same
clock.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Optional, Sequence

__all__ = [
    "Location",
    "Request",
    "VehicleState",
    "SystemState",
    "VehicleDecision",
    "FleetDecision",
    "ObjectiveMode",
    "Objective",
    "Violation",
    "ValidationResult",
    "StructureError",
    "validate_decision",
    "advance",
    "evolve_fleet",
    "trip_reward",
    "FEASIBILITY_EPS",
]

# Slack applied when re-checking reachability inequalities; graph construction
# uses exact comparisons, so the validator must not reject on float noise.
FEASIBILITY_EPS = 1e-9


class StructureError(ValueError):
    """Decision references an unknown vehicle or request id."""


@dataclass(frozen=True)
class Location:
    """Planar point, meters east/north within the operating area."""

    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"non-finite location ({self.x}, {self.y})")

    def distance_m(self, other: "Location") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)


@dataclass(frozen=True)
class Request:
    """A ride demand: origin/destination, start and arrival time, reward."""

    id: int
    origin: Location
    destination: Location
    start_time: float
    arrival_time: float
    reward: float

    def __post_init__(self):
        if self.arrival_time < self.start_time:
            raise ValueError(
                f"request {self.id}: arrival {self.arrival_time} before start {self.start_time}"
            )

    @property
    def duration_s(self) -> float:
        return self.arrival_time - self.start_time


@dataclass(frozen=True)
class VehicleState:
    """Vehicle location plus its (at most one) unfinished assigned request."""

    vehicle_id: int
    location: Location
    pending: tuple[Request, ...] = ()

    def __post_init__(self):
        if len(self.pending) > 1:
            raise ValueError(
                f"vehicle {self.vehicle_id}: {len(self.pending)} pending requests, at most 1 allowed"
            )

    def exit_point(self, decision_time: float) -> tuple[float, Location]:
        """Earliest time and place this vehicle can begin a new leg.

        Idle vehicles are available now at their location; a vehicle mid-request
        becomes available at the pending dropoff.
        """
        if self.pending:
            last = self.pending[-1]
            return last.arrival_time, last.destination
        return decision_time, self.location


@dataclass(frozen=True)
class SystemState:
    """Decision-epoch snapshot: current request batch and all vehicle states."""

    epoch: int
    period_s: float
    batch: tuple[Request, ...]
    vehicles: tuple[VehicleState, ...]

    def __post_init__(self):
        if self.epoch < 1:
            raise ValueError(f"epoch must be >= 1, got {self.epoch}")
        ids = [r.id for r in self.batch]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate request ids in batch")
        vids = [v.vehicle_id for v in self.vehicles]
        if len(set(vids)) != len(vids):
            raise ValueError("duplicate vehicle ids")
        t = self.decision_time
        for v in self.vehicles:
            for r in v.pending:
                if r.arrival_time <= t:
                    raise ValueError(
                        f"vehicle {v.vehicle_id}: pending request {r.id} already finished"
                    )

    @property
    def decision_time(self) -> float:
        return (self.epoch - 1) * self.period_s

    @property
    def next_decision_time(self) -> float:
        return self.epoch * self.period_s

    def vehicle_by_id(self) -> dict[int, VehicleState]:
        return {v.vehicle_id: v for v in self.vehicles}

    def batch_by_id(self) -> dict[int, Request]:
        return {r.id: r for r in self.batch}


@dataclass(frozen=True)
class VehicleDecision:
    """One vehicle's trip: pending prefix, newly assigned requests, and an
    optional final rebalancing target."""

    vehicle_id: int
    trip: tuple[Request, ...] = ()
    rebalance_target: Optional[Location] = None


@dataclass(frozen=True)
class FleetDecision:
    decisions: tuple[VehicleDecision, ...]

    def by_vehicle(self) -> dict[int, VehicleDecision]:
        return {d.vehicle_id: d for d in self.decisions}

    @staticmethod
    def empty(state: SystemState) -> "FleetDecision":
        """Keep every vehicle on its pending trip, assign nothing new."""
        return FleetDecision(
            tuple(VehicleDecision(v.vehicle_id, v.pending) for v in state.vehicles)
        )


class ObjectiveMode(Enum):
    PROFIT = "profit"
    SATISFIED_CUSTOMERS = "satisfied_customers"


@dataclass(frozen=True)
class Objective:
    """Reward interpretation: profit (revenue minus distance cost) or served
    request count with a marginal distance penalty."""

    mode: ObjectiveMode
    cost_per_km: float

    @staticmethod
    def profit(cost_per_km: float = 0.45) -> "Objective":
        return Objective(ObjectiveMode.PROFIT, cost_per_km)

    @staticmethod
    def satisfied_customers(cost_per_km: float = 0.00001) -> "Objective":
        return Objective(ObjectiveMode.SATISFIED_CUSTOMERS, cost_per_km)


@dataclass(frozen=True)
class Violation:
    constraint: str  # 'i', 'ii', 'iii' or 'pending'
    vehicle_id: Optional[int]
    request_id: Optional[int]
    detail: str


@dataclass(frozen=True)
class ValidationResult:
    violations: tuple[Violation, ...]

    @property
    def ok(self) -> bool:
        return not self.violations


def validate_decision(state: SystemState, decision: FleetDecision, tt) -> ValidationResult:
    """Check a fleet decision against the feasibility constraints.

    (i) no request assigned to two vehicles, (ii) consecutive requests are
    reachable in time, (iii) a first new request is reachable from the
    vehicle's current position. Unknown ids raise StructureError; constraint
    breaches are reported, not raised.
    """
    known_vehicles = state.vehicle_by_id()
    batch = state.batch_by_id()
    seen_vehicles: set[int] = set()
    violations: list[Violation] = []
    t0 = state.decision_time
    assigned: dict[int, int] = {}  # request id -> vehicle id

    for vd in decision.decisions:
        if vd.vehicle_id in seen_vehicles:
            raise StructureError(f"vehicle {vd.vehicle_id} appears twice in decision")
        seen_vehicles.add(vd.vehicle_id)
        vstate = known_vehicles.get(vd.vehicle_id)
        if vstate is None:
            raise StructureError(f"unknown vehicle id {vd.vehicle_id}")

        n_pending = len(vstate.pending)
        if tuple(vd.trip[:n_pending]) != vstate.pending:
            violations.append(
                Violation(
                    "pending",
                    vd.vehicle_id,
                    None,
                    "trip does not start with the vehicle's pending sequence",
                )
            )
            continue
        new_requests = vd.trip[n_pending:]

        for r in new_requests:
            if r.id not in batch:
                raise StructureError(
                    f"request {r.id} not in current batch (vehicle {vd.vehicle_id})"
                )
            if r.id in assigned:
                violations.append(
                    Violation(
                        "i",
                        vd.vehicle_id,
                        r.id,
                        f"request {r.id} also assigned to vehicle {assigned[r.id]}",
                    )
                )
            else:
                assigned[r.id] = vd.vehicle_id

        # constraint (iii) / (ii): first new request reachable from the
        # vehicle's exit point (current position, or pending dropoff).
        if new_requests:
            avail_t, avail_loc = vstate.exit_point(t0)
            first = new_requests[0]
            arrive = avail_t + tt.travel_time(avail_loc, first.origin)[0]
            if arrive > first.start_time + FEASIBILITY_EPS:
                kind = "ii" if vstate.pending else "iii"
                violations.append(
                    Violation(
                        kind,
                        vd.vehicle_id,
                        first.id,
                        f"cannot reach request {first.id} by {first.start_time:.3f}s "
                        f"(earliest arrival {arrive:.3f}s)",
                    )
                )
            for prev, nxt in zip(new_requests, new_requests[1:]):
                arrive = prev.arrival_time + tt.travel_time(prev.destination, nxt.origin)[0]
                if arrive > nxt.start_time + FEASIBILITY_EPS:
                    violations.append(
                        Violation(
                            "ii",
                            vd.vehicle_id,
                            nxt.id,
                            f"request {prev.id} -> {nxt.id}: arrival {arrive:.3f}s "
                            f"after start {nxt.start_time:.3f}s",
                        )
                    )

    missing = set(known_vehicles) - seen_vehicles
    if missing:
        raise StructureError(f"decision does not cover vehicles {sorted(missing)}")
    return ValidationResult(tuple(violations))


def rebalance_progress(start: Location, start_time: float, target: Location,
                       until: float, tt) -> tuple[Location, float, bool]:
    """Position, km driven and arrival flag for a rebalancing leg truncated at
    time `until`. The leg is a straight segment at the provider's pace."""
    leg_s, leg_km = tt.travel_time(start, target)
    if start_time >= until:
        return start, 0.0, False
    if leg_s <= 0.0:
        return target, 0.0, True
    frac = (until - start_time) / leg_s
    if frac >= 1.0:
        return target, leg_km, True
    x = start.x + frac * (target.x - start.x)
    y = start.y + frac * (target.y - start.y)
    return Location(x, y), frac * leg_km, False


def _evolve_vehicle(vstate: VehicleState, vd: VehicleDecision, t1: float,
                    t0: float, tt) -> tuple[VehicleState, float]:
    """Next vehicle state at time t1 plus rebalancing km driven in [t0, t1)."""
    unfinished = tuple(r for r in vd.trip if r.arrival_time > t1)
    if unfinished:
        # Mid-request at t1: position frozen at the leg destination; any
        # rebalancing target has not been reached and is dropped (the next
        # decision may reissue it).
        return VehicleState(vstate.vehicle_id, unfinished[-1].destination, unfinished), 0.0

    if vd.trip:
        free_time, free_loc = vd.trip[-1].arrival_time, vd.trip[-1].destination
    else:
        free_time, free_loc = t0, vstate.location

    if vd.rebalance_target is None:
        return VehicleState(vstate.vehicle_id, free_loc), 0.0

    pos, km, _reached = rebalance_progress(free_loc, free_time, vd.rebalance_target, t1, tt)
    return VehicleState(vstate.vehicle_id, pos), km


def evolve_fleet(state: SystemState, decision: FleetDecision,
                 new_requests: Iterable[Request], tt
                 ) -> tuple[SystemState, dict[int, float]]:
    """advance() plus per-vehicle rebalancing km driven during the period."""
    t0 = state.decision_time
    t1 = state.next_decision_time
    by_vehicle = decision.by_vehicle()
    next_vehicles = []
    reb_km: dict[int, float] = {}
    for vstate in state.vehicles:
        vd = by_vehicle.get(vstate.vehicle_id)
        if vd is None:
            vd = VehicleDecision(vstate.vehicle_id, vstate.pending)
        nxt, km = _evolve_vehicle(vstate, vd, t1, t0, tt)
        next_vehicles.append(nxt)
        reb_km[vstate.vehicle_id] = km
    next_state = SystemState(
        epoch=state.epoch + 1,
        period_s=state.period_s,
        batch=tuple(new_requests),
        vehicles=tuple(next_vehicles),
    )
    return next_state, reb_km


def advance(state: SystemState, decision: FleetDecision,
            new_requests: Iterable[Request], tt) -> SystemState:
    """Deterministic system evolution over one period.

    Assigned-but-unfinished requests become the pending sequence; unassigned
    batch requests leave the system; the new batch arrives and the epoch
    increments.
    """
    return evolve_fleet(state, decision, new_requests, tt)[0]


def trip_reward(trip: Sequence[Request], deadhead_km: float, objective: Objective, tt) -> float:
    """Reward of one vehicle trip under the configured objective.

    Profit: sum of request rewards minus cost_per_km * (served + deadhead) km.
    Satisfied customers: request count minus the marginal distance cost.
    """
    if deadhead_km < 0:
        raise ValueError("deadhead_km must be nonnegative")
    if not trip and deadhead_km == 0.0:
        return 0.0
    served_km = sum(tt.travel_time(r.origin, r.destination)[1] for r in trip)
    total_km = served_km + deadhead_km
    if objective.mode is ObjectiveMode.PROFIT:
        return sum(r.reward for r in trip) - objective.cost_per_km * total_km
    return len(trip) - objective.cost_per_km * total_km
