"""Benchmark dispatching policies and the path decoder.

Greedy and sampling set arc weights from rewards (cost-corrected for the
profit objective, with sampled-request rewards discounted); the learned
sample-based and cell-based policies predict weights with a linear model.
The full-information bound solves one dispatch problem over the entire
request stream.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .demand import RebalancingGrid, RequestDistribution, sample_artificial_requests
from .digraph import (
    A_CHAIN, A_DISPATCH, DispatchGraph, GraphMode, GraphParams, V_ARTIFICIAL,
    V_REBALANCE, V_REQUEST, V_VEHICLE, build_graph, sparsify,
)
from .features import FeatureContext, ModelWeights, predict_weights
from .kdspp import DisjointnessMode, PathSolution, SolverError, solve
from .model import (
    FleetDecision, Location, Objective, Request, StructureError, SystemState,
    VehicleDecision, VehicleState, advance,
)

__all__ = [
    "PolicyKind",
    "PolicySpec",
    "PolicyRuntime",
    "FullInfoResult",
    "reward_weights",
    "decide",
    "decode",
    "full_information_bound",
    "replay_schedule",
    "group_by_epoch",
]


class PolicyKind(Enum):
    GREEDY = "greedy"
    SAMPLING = "sampling"
    SAMPLE_BASED = "sample_based"
    CELL_BASED = "cell_based"
    FULL_INFORMATION = "full_information"


@dataclass(frozen=True)
class PolicySpec:
    kind: PolicyKind
    horizon_s: float = 300.0
    discount: float = 0.2
    n_capacity: int = 1
    t_max_s: float = math.inf
    d_max_km: float = math.inf
    model: Optional[ModelWeights] = None

    def __post_init__(self):
        if not (0.0 < self.discount <= 1.0):
            raise ValueError("discount must be in (0, 1]")
        if self.n_capacity < 1:
            raise ValueError("n_capacity must be >= 1")


@dataclass
class PolicyRuntime:
    """Everything a policy needs besides the state: travel times, objective,
    rebalancing grid, calibrated demand, and the scenario seed."""

    tt: object
    objective: Objective
    grid: Optional[RebalancingGrid] = None
    dist: Optional[RequestDistribution] = None
    seed: int = 0


def reward_weights(graph: DispatchGraph, objective: Objective,
                   artificial_discount: float = 1.0) -> np.ndarray:
    """Rule-based arc weights: request reward minus the profit cost of the
    deadhead and service legs; sampled-request rewards are discounted."""
    theta = np.zeros(graph.n_arcs)
    into_req = np.isin(graph.a_kind, (A_DISPATCH, A_CHAIN))
    idx = np.flatnonzero(into_req)
    if len(idx) == 0:
        return theta
    req = graph.v_ref[graph.a_head[idx]]
    p = graph.r_p[req] * np.where(graph.r_artificial[req], artificial_discount, 1.0)
    theta[idx] = p - objective.cost_per_km * (graph.a_dh_km[idx] + graph.r_service_km[req])
    return theta


def _epoch_rng_seed(rt: PolicyRuntime, state: SystemState) -> list[int]:
    return [int(rt.seed), int(state.epoch)]


def build_policy_graph(spec: PolicySpec, state: SystemState, rt: PolicyRuntime,
                       sample_seed=None) -> DispatchGraph:
    """The (sparsified) decision digraph a policy kind operates on."""
    if spec.kind is PolicyKind.GREEDY:
        graph = build_graph(state, GraphMode.BASE, GraphParams(), rt.tt)
    elif spec.kind in (PolicyKind.SAMPLING, PolicyKind.SAMPLE_BASED):
        if rt.dist is None:
            raise ValueError(f"{spec.kind.value} policy needs a calibrated request distribution")
        t_lo = state.next_decision_time
        sampled = sample_artificial_requests(
            rt.dist, t_lo, t_lo + spec.horizon_s,
            seed=sample_seed if sample_seed is not None else _epoch_rng_seed(rt, state))
        graph = build_graph(
            state, GraphMode.SAMPLE_BASED,
            GraphParams(horizon_s=spec.horizon_s, sampled=tuple(sampled)), rt.tt)
    elif spec.kind is PolicyKind.CELL_BASED:
        if rt.grid is None:
            raise ValueError("cell-based policy needs a rebalancing grid")
        graph = build_graph(
            state, GraphMode.CELL_BASED,
            GraphParams(horizon_s=spec.horizon_s, grid=rt.grid,
                        n_capacity=spec.n_capacity), rt.tt)
    else:
        raise ValueError(f"no per-epoch digraph for policy kind {spec.kind}")
    return sparsify(graph, spec.t_max_s, spec.d_max_km)


def decide(spec: PolicySpec, state: SystemState, rt: PolicyRuntime) -> FleetDecision:
    """Apply one policy to one system state."""
    if spec.kind is PolicyKind.FULL_INFORMATION:
        raise ValueError("the full-information bound is offline; use full_information_bound")
    graph = build_policy_graph(spec, state, rt)

    if spec.kind is PolicyKind.GREEDY:
        graph = graph.with_weights(reward_weights(graph, rt.objective))
        mode = DisjointnessMode.VERTEX
    elif spec.kind is PolicyKind.SAMPLING:
        graph = graph.with_weights(
            reward_weights(graph, rt.objective, artificial_discount=spec.discount))
        mode = DisjointnessMode.VERTEX
    else:
        if spec.model is None:
            raise ValueError(f"{spec.kind.value} policy needs trained model weights")
        if rt.grid is None:
            raise ValueError("learned policies need a rebalancing grid for features")
        ctx = FeatureContext(state, rt.grid, rt.objective, rt.dist)
        graph = predict_weights(spec.model, graph, ctx)
        mode = (DisjointnessMode.ARC if spec.kind is PolicyKind.CELL_BASED
                else DisjointnessMode.VERTEX)

    sol = solve(graph, mode)
    return decode(sol, graph, state)


def decode(sol: PathSolution, graph: DispatchGraph, state: SystemState) -> FleetDecision:
    """Turn k disjoint paths into a fleet decision.

    Real request vertices become dispatch assignments in path order; the first
    artificial or rebalancing vertex becomes the rebalancing target (artificial
    request origin, or cell center); later artificial vertices only informed
    the optimization and are ignored.
    """
    decisions = []
    for path in sol.paths:
        if graph.v_kind[path[1]] != V_VEHICLE:
            raise StructureError(f"path {path}: second vertex is not a vehicle vertex")
        vstate = state.vehicles[graph.v_ref[path[1]]]
        trip = list(vstate.pending)
        target: Optional[Location] = None
        for u in path[2:-1]:
            kind = graph.v_kind[u]
            if kind == V_REQUEST:
                trip.append(graph.requests[graph.v_ref[u]])
            elif kind == V_ARTIFICIAL:
                if target is None:
                    target = graph.requests[graph.v_ref[u]].origin
            elif kind == V_REBALANCE:
                if target is None:
                    target = graph.grid.cell_center(int(graph.v_ref[u]))
        decisions.append(VehicleDecision(vstate.vehicle_id, tuple(trip), target))
    return FleetDecision(tuple(decisions))


# -- full-information bound ----------------------------------------------------


@dataclass(frozen=True)
class FullInfoResult:
    bound: float
    trips: dict[int, tuple[Request, ...]]
    served: int
    service_km: float
    deadhead_km: float

    @property
    def total_km(self) -> float:
        return self.service_km + self.deadhead_km


def full_information_bound(requests: Sequence[Request], fleet: Sequence[VehicleState],
                           objective: Objective, tt, t_max_s: float = math.inf,
                           d_max_km: float = math.inf, period_s: float = 60.0
                           ) -> FullInfoResult:
    """Offline optimum with every request known upfront; an upper bound on any
    online policy's realized objective."""
    state = SystemState(epoch=1, period_s=period_s, batch=tuple(requests),
                        vehicles=tuple(fleet))
    graph = build_graph(state, GraphMode.BASE, GraphParams(), tt)
    graph = sparsify(graph, t_max_s, d_max_km)
    graph = graph.with_weights(reward_weights(graph, objective))
    sol = solve(graph, DisjointnessMode.VERTEX)

    trips: dict[int, tuple[Request, ...]] = {}
    service_km = 0.0
    deadhead_km = 0.0
    served = 0
    for path in sol.paths:
        vstate = state.vehicles[graph.v_ref[path[1]]]
        seq = [graph.requests[graph.v_ref[u]] for u in path[2:-1]
               if graph.v_kind[u] == V_REQUEST]
        trips[vstate.vehicle_id] = tuple(seq)
        served += len(seq)
        prev = vstate.location
        for r in seq:
            deadhead_km += tt.travel_time(prev, r.origin)[1]
            service_km += tt.travel_time(r.origin, r.destination)[1]
            prev = r.destination
    return FullInfoResult(bound=float(sol.objective), trips=trips, served=served,
                          service_km=service_km, deadhead_km=deadhead_km)


def group_by_epoch(requests: Sequence[Request], period_s: float, horizon: int
                   ) -> tuple[tuple[Request, ...], ...]:
    """Bucket requests into per-epoch batches; epoch t covers
    [(t-1)*period_s, t*period_s). Requests outside [0, horizon*period_s) are
    dropped."""
    batches: list[list[Request]] = [[] for _ in range(horizon)]
    for r in sorted(requests, key=lambda r: (r.start_time, r.id)):
        e = int(r.start_time // period_s)
        if 0 <= e < horizon:
            batches[e].append(r)
    return tuple(tuple(b) for b in batches)


def replay_schedule(fleet: Sequence[VehicleState], trips: dict[int, tuple[Request, ...]],
                    batches: Sequence[Sequence[Request]], period_s: float, tt):
    """Replay a fixed offline schedule epoch by epoch.

    Yields (state, decision) pairs where each decision assigns the scheduled
    requests in their batch epoch. Offline schedules are not necessarily
    online-feasible (a vehicle may have to depart before the request becomes
    visible), so these decisions are replayed without validation.
    """
    horizon = len(batches)
    state = SystemState(epoch=1, period_s=period_s, batch=tuple(batches[0]),
                        vehicles=tuple(fleet))
    for t in range(1, horizon + 1):
        decisions = []
        for v in state.vehicles:
            new = [r for r in trips.get(v.vehicle_id, ())
                   if int(r.start_time // period_s) == t - 1]
            decisions.append(VehicleDecision(v.vehicle_id, v.pending + tuple(new)))
        decision = FleetDecision(tuple(decisions))
        yield state, decision
        nxt = batches[t] if t < horizon else ()
        state = advance(state, decision, nxt, tt)
