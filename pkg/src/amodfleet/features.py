"""Arc features and the generalized linear arc-weight predictor.

Two schemas exist: the sample-based one carries time-binned estimates of
future reward/deadhead cost at the dropoff (25 two-minute bins covering the
next 50 minutes); the cell-based one drops the time bins but adds rebalancing
and capacity vertex descriptors. Ratios with a zero denominator are imputed
as zero, and groups that do not apply to an arc stay zero, so every vector is
finite.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .demand import RebalancingGrid, RequestDistribution
from .digraph import (
    A_CHAIN, A_DISPATCH, A_REB_CAP, A_TO_REB, DispatchGraph, V_ARTIFICIAL,
    V_REQUEST,
)
from .model import Objective, SystemState

__all__ = [
    "FeatureSchema",
    "FeatureContext",
    "ModelWeights",
    "SB_SCHEMA",
    "CB_SCHEMA",
    "schema_by_name",
    "feature_matrix",
    "compute_features",
    "predict_weights",
    "normalization_divisors",
    "save_model",
    "load_model",
]

N_TIME_BINS = 25
TIME_BIN_S = 120.0

_CELL_STATS = (
    "n_vehicles", "n_requests", "requests_per_vehicle", "vehicles_per_request",
    "future_starting_requests", "future_arriving_requests",
    "future_starting_vehicles", "future_arriving_vehicles",
)
_EXPECTED_TRIP = (
    "exp_duration_s", "exp_reward_per_duration", "exp_distance_km",
    "exp_reward_per_km", "exp_cost_per_duration", "exp_reward",
)
_REQUEST_BASE = (
    "duration_s", "reward_per_duration", "distance_km", "reward_per_km",
    "reward_per_time_to_pickup", "reward_per_time_to_dropoff",
    "cost_per_duration", "cost_per_time_to_dropoff", "reward",
)
_DEADHEAD_BASE = (
    "distance_km", "duration_s", "cost_per_duration",
    "cost_per_time_to_dropoff", "cost_per_km",
)


def _bins(prefix: str) -> tuple[str, ...]:
    return tuple(f"{prefix}_bin_{i:02d}" for i in range(N_TIME_BINS))


@dataclass(frozen=True)
class FeatureSchema:
    name: str
    groups: tuple[tuple[str, tuple[str, ...]], ...]

    @property
    def length(self) -> int:
        return sum(len(names) for _, names in self.groups)

    def offset(self, group: str) -> tuple[int, int]:
        pos = 0
        for g, names in self.groups:
            if g == group:
                return pos, pos + len(names)
            pos += len(names)
        raise KeyError(f"no feature group {group!r} in schema {self.name!r}")

    def feature_names(self) -> tuple[str, ...]:
        return tuple(f"{g}.{n}" for g, names in self.groups for n in names)


SB_SCHEMA = FeatureSchema(
    "sb",
    (
        ("vehicle_cell", _CELL_STATS),
        ("request_cell", _CELL_STATS),
        ("request", _REQUEST_BASE + _bins("future_reward")),
        ("deadhead", _DEADHEAD_BASE + _bins("future_cost")),
    ),
)

CB_SCHEMA = FeatureSchema(
    "cb",
    (
        ("vehicle_cell", _CELL_STATS),
        ("request_cell", _CELL_STATS),
        ("request", _REQUEST_BASE),
        ("deadhead", _DEADHEAD_BASE),
        ("rebalance_cell", _CELL_STATS + _EXPECTED_TRIP),
        ("rebalance_deadhead", ("distance_km", "duration_s")),
        ("capacity", _CELL_STATS + _EXPECTED_TRIP + ("slot_index",)),
    ),
)

_SCHEMAS = {s.name: s for s in (SB_SCHEMA, CB_SCHEMA)}


def schema_by_name(name: str) -> FeatureSchema:
    try:
        return _SCHEMAS[name]
    except KeyError:
        raise KeyError(f"unknown feature schema {name!r}") from None


def _safe_div(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    out = np.zeros(np.broadcast_shapes(a.shape, b.shape))
    np.divide(a, b, out=out, where=b != 0)
    return out


@dataclass
class FeatureContext:
    """State-level quantities shared by all arcs of one decision epoch."""

    state: SystemState
    grid: RebalancingGrid
    objective: Objective
    dist: RequestDistribution | None = None
    _cell_stats: np.ndarray | None = field(default=None, repr=False)
    _horizon: tuple[float, float] | None = field(default=None, repr=False)

    def cell_stats(self, horizon_end: float) -> np.ndarray:
        """(n_cells, 8) matrix of the per-cell state descriptors."""
        window = (self.state.decision_time, max(horizon_end, self.state.decision_time))
        if self._cell_stats is not None and self._horizon == window:
            return self._cell_stats
        grid = self.grid
        n = grid.n_cells
        t0, t1 = window

        veh = np.zeros(n)
        fut_start_veh = np.zeros(n)
        fut_arr_veh = np.zeros(n)
        for v in self.state.vehicles:
            veh[int(grid.cell_of(v.location.x, v.location.y))] += 1
            avail_t, loc = v.exit_point(t0)
            if avail_t < t1:
                fut_start_veh[int(grid.cell_of(loc.x, loc.y))] += 1
            if v.pending:
                dest = v.pending[-1].destination
                fut_arr_veh[int(grid.cell_of(dest.x, dest.y))] += 1

        req = np.zeros(n)
        for r in self.state.batch:
            req[int(grid.cell_of(r.origin.x, r.origin.y))] += 1

        cells = np.arange(n)
        if self.dist is not None and t1 > t0:
            fut_start_req = self.dist.expected_starts(cells, t0, t1)
            fut_arr_req = self.dist.expected_arrivals(cells, t0, t1)
        else:
            fut_start_req = np.zeros(n)
            fut_arr_req = np.zeros(n)

        stats = np.column_stack([
            veh, req, _safe_div(req, veh), _safe_div(veh, req),
            fut_start_req, fut_arr_req, fut_start_veh, fut_arr_veh,
        ])
        self._cell_stats = stats
        self._horizon = window
        return stats

    def expected_trip_block(self, horizon_end: float) -> np.ndarray:
        """(n_cells, 6) expected attributes of future requests per cell."""
        n = self.grid.n_cells
        if self.dist is None:
            return np.zeros((n, 6))
        t0 = self.state.decision_time
        t1 = max(horizon_end, t0)
        cells = np.arange(n)
        e_n = self.dist.expected_starts(cells, t0, t1)
        mdur = _safe_div(self.dist.window_sum(self.dist.table("dur_rate"), cells, t0, t1), e_n)
        mrew = _safe_div(self.dist.window_sum(self.dist.table("reward_rate"), cells, t0, t1), e_n)
        mkm = _safe_div(self.dist.window_sum(self.dist.table("km_rate"), cells, t0, t1), e_n)
        cpk = self.objective.cost_per_km
        return np.column_stack([
            mdur, _safe_div(mrew, mdur), mkm, _safe_div(mrew, mkm),
            _safe_div(cpk * mkm, mdur), mrew,
        ])


def _request_blocks(graph: DispatchGraph, ctx: FeatureContext, binned: bool):
    """Per-request descriptor matrix and (optionally) the future bins."""
    cpk = ctx.objective.cost_per_km
    dur = graph.r_a - graph.r_s
    ttp = graph.r_s - graph.decision_time
    ttd = graph.r_a - graph.decision_time
    cost = cpk * graph.r_service_km
    base = np.column_stack([
        dur,
        _safe_div(graph.r_p, dur),
        graph.r_service_km,
        _safe_div(graph.r_p, graph.r_service_km),
        _safe_div(graph.r_p, ttp),
        _safe_div(graph.r_p, ttd),
        _safe_div(cost, dur),
        _safe_div(cost, ttd),
        graph.r_p,
    ])
    if not binned:
        return base, None, None, ttd
    n_req = graph.n_requests
    if ctx.dist is None or n_req == 0:
        zeros = np.zeros((n_req, N_TIME_BINS))
        return base, zeros, zeros, ttd
    cells = ctx.grid.cell_of(graph.r_dx, graph.r_dy)[:, None]
    edges = graph.r_a[:, None] + TIME_BIN_S * np.arange(N_TIME_BINS + 1)[None, :]
    reward_bins = ctx.dist.window_sum(
        ctx.dist.table("reward_rate"), cells, edges[:, :-1], edges[:, 1:])
    cost_bins = cpk * ctx.dist.window_sum(
        ctx.dist.table("dhkm_rate"), cells, edges[:, :-1], edges[:, 1:])
    return base, reward_bins, cost_bins, ttd


def feature_matrix(graph: DispatchGraph, ctx: FeatureContext,
                   schema: FeatureSchema, arcs: np.ndarray | None = None) -> np.ndarray:
    """Feature rows for the given arcs (default: all), deterministic."""
    if arcs is None:
        arcs = np.arange(graph.n_arcs)
    arcs = np.asarray(arcs, dtype=np.int64)
    out = np.zeros((len(arcs), schema.length))
    if len(arcs) == 0:
        return out

    binned = schema.name == "sb"
    cell_stats = ctx.cell_stats(graph.horizon_end)
    req_base, reward_bins, cost_bins, ttd = _request_blocks(graph, ctx, binned)
    kind = graph.a_kind[arcs]
    tail = graph.a_tail[arcs]
    head = graph.a_head[arcs]
    cpk = ctx.objective.cost_per_km

    # arcs into request vertices (dispatching and chaining)
    into_req = np.isin(kind, (A_DISPATCH, A_CHAIN))
    if np.any(into_req):
        sel = np.flatnonzero(into_req)
        a_ids = arcs[sel]
        req_idx = graph.v_ref[head[sel]]
        tail_cell = ctx.grid.cell_of(graph.v_x[tail[sel]], graph.v_y[tail[sel]])
        origin_cell = ctx.grid.cell_of(graph.r_ox[req_idx], graph.r_oy[req_idx])
        lo, hi = schema.offset("vehicle_cell")
        out[sel, lo:hi] = cell_stats[tail_cell]
        lo, hi = schema.offset("request_cell")
        out[sel, lo:hi] = cell_stats[origin_cell]
        lo, hi = schema.offset("request")
        block = req_base[req_idx]
        if binned:
            block = np.concatenate([block, reward_bins[req_idx]], axis=1)
        out[sel, lo:hi] = block
        dh_km = graph.a_dh_km[a_ids]
        dh_s = graph.a_dh_s[a_ids]
        dh_cost = cpk * dh_km
        dh = np.column_stack([
            dh_km, dh_s, _safe_div(dh_cost, dh_s),
            _safe_div(dh_cost, ttd[req_idx]), _safe_div(dh_cost, dh_km),
        ])
        if binned:
            dh = np.concatenate([dh, cost_bins[req_idx]], axis=1)
        lo, hi = schema.offset("deadhead")
        out[sel, lo:hi] = dh

    if schema.name != "cb":
        return out
    exp_trip = ctx.expected_trip_block(graph.horizon_end)

    to_reb = kind == A_TO_REB
    if np.any(to_reb):
        sel = np.flatnonzero(to_reb)
        a_ids = arcs[sel]
        cell = graph.v_ref[head[sel]]
        tail_cell = ctx.grid.cell_of(graph.v_x[tail[sel]], graph.v_y[tail[sel]])
        lo, hi = schema.offset("vehicle_cell")
        out[sel, lo:hi] = cell_stats[tail_cell]
        lo, hi = schema.offset("rebalance_cell")
        out[sel, lo:hi] = np.concatenate([cell_stats[cell], exp_trip[cell]], axis=1)
        lo, hi = schema.offset("rebalance_deadhead")
        out[sel, lo:hi] = np.column_stack([graph.a_dh_km[a_ids], graph.a_dh_s[a_ids]])

    reb_cap = kind == A_REB_CAP
    if np.any(reb_cap):
        sel = np.flatnonzero(reb_cap)
        cell = graph.v_ref[head[sel]]
        slot = graph.v_aux[head[sel]].astype(np.float64)
        lo, hi = schema.offset("capacity")
        out[sel, lo:hi] = np.concatenate(
            [cell_stats[cell], exp_trip[cell], slot[:, None]], axis=1)
    return out


def compute_features(arc: int, graph: DispatchGraph, ctx: FeatureContext,
                     schema: FeatureSchema) -> np.ndarray:
    """Feature vector of a single arc."""
    if not 0 <= arc < graph.n_arcs:
        raise IndexError(f"arc {arc} out of range")
    return feature_matrix(graph, ctx, schema, np.array([arc]))[0]


@dataclass(frozen=True)
class ModelWeights:
    """Linear predictor parameters, optionally with per-feature divisors."""

    schema: FeatureSchema
    w: np.ndarray
    divisors: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.w) != self.schema.length:
            raise ValueError(
                f"weight length {len(self.w)} != schema length {self.schema.length}")
        if self.divisors is not None:
            if len(self.divisors) != self.schema.length:
                raise ValueError("divisor length mismatch")
            if np.any(np.asarray(self.divisors) <= 0):
                raise ValueError("divisors must be strictly positive")

    def apply(self, phi: np.ndarray) -> np.ndarray:
        if self.divisors is not None:
            phi = phi / self.divisors
        return phi @ self.w


def predict_weights(model: ModelWeights, graph: DispatchGraph,
                    ctx: FeatureContext) -> DispatchGraph:
    """Fill arc weights from the linear model; non-predictable arcs stay zero."""
    mask = graph.predictable_mask()
    theta = np.zeros(graph.n_arcs)
    idx = np.flatnonzero(mask)
    if len(idx):
        phi = feature_matrix(graph, ctx, model.schema, idx)
        theta[idx] = model.apply(phi)
    return graph.with_weights(theta)


def normalization_divisors(matrices) -> np.ndarray:
    """Per-feature standard deviation over stacked rows; zeros become 1."""
    stacked = np.concatenate([np.asarray(m) for m in matrices], axis=0)
    std = stacked.std(axis=0)
    std[std == 0] = 1.0
    return std


def save_model(model: ModelWeights, path) -> None:
    payload = {
        "schema": model.schema.name,
        "weights": [repr(float(x)) for x in model.w],
        "divisors": None if model.divisors is None
        else [repr(float(x)) for x in model.divisors],
        "metadata": model.metadata,
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True))


def load_model(path) -> ModelWeights:
    payload = json.loads(Path(path).read_text())
    schema = schema_by_name(payload["schema"])
    w = np.array([float(x) for x in payload["weights"]])
    div = payload.get("divisors")
    divisors = None if div is None else np.array([float(x) for x in div])
    return ModelWeights(schema, w, divisors, payload.get("metadata", {}))
