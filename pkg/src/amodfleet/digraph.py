"""Dispatching digraph construction and sparsification.

The graph is columnar: parallel numpy arrays for vertices and arcs, so that
construction, weight prediction and feature extraction vectorize. A path
source -> vehicle -> requests... -> sink is one feasible vehicle trip; the
cell-based variant splits request vertices and adds rebalancing/capacity
vertices so arc-disjoint paths may share rebalancing targets.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .demand import RebalancingGrid
from .model import Request, SystemState

__all__ = [
    "GraphMode",
    "GraphParams",
    "DispatchGraph",
    "build_graph",
    "sparsify",
    "topological_order",
    "V_SOURCE", "V_SINK", "V_VEHICLE", "V_REQUEST", "V_REQUEST_OUT",
    "V_ARTIFICIAL", "V_REBALANCE", "V_CAPACITY",
    "A_SRC", "A_DISPATCH", "A_CHAIN", "A_SINK", "A_SPLIT", "A_TO_REB",
    "A_REB_CAP", "A_CAP_SINK",
]

# vertex kinds
V_SOURCE, V_SINK, V_VEHICLE, V_REQUEST, V_REQUEST_OUT, V_ARTIFICIAL, \
    V_REBALANCE, V_CAPACITY = range(8)

# arc kinds
A_SRC, A_DISPATCH, A_CHAIN, A_SINK, A_SPLIT, A_TO_REB, A_REB_CAP, \
    A_CAP_SINK = range(8)

# arcs whose weight the ML predictor sets; all others stay zero
PREDICTABLE_KINDS = (A_DISPATCH, A_CHAIN, A_TO_REB, A_REB_CAP)


class GraphMode(Enum):
    BASE = "base"
    SAMPLE_BASED = "sample_based"
    CELL_BASED = "cell_based"


@dataclass(frozen=True)
class GraphParams:
    horizon_s: float = 300.0
    grid: RebalancingGrid | None = None
    n_capacity: int = 1
    sampled: tuple[Request, ...] = ()


@dataclass(frozen=True)
class DispatchGraph:
    mode: GraphMode
    k: int
    epoch: int
    period_s: float
    decision_time: float
    horizon_end: float
    grid: RebalancingGrid | None
    # vertices (parallel arrays); index 0 = source, 1 = sink
    v_kind: np.ndarray   # int8
    v_ref: np.ndarray    # int32: vehicle idx / request idx / cell id
    v_aux: np.ndarray    # int32: capacity slot index
    v_time: np.ndarray   # float64: availability time at the vertex exit
    v_x: np.ndarray
    v_y: np.ndarray
    # request table (batch then artificial), aligned by request index
    requests: tuple[Request, ...]
    r_s: np.ndarray
    r_a: np.ndarray
    r_ox: np.ndarray
    r_oy: np.ndarray
    r_dx: np.ndarray
    r_dy: np.ndarray
    r_p: np.ndarray
    r_service_s: np.ndarray
    r_service_km: np.ndarray
    r_artificial: np.ndarray  # bool
    req_vertex_in: np.ndarray   # request idx -> entry vertex
    req_vertex_out: np.ndarray  # request idx -> exit vertex
    # arcs (parallel arrays)
    a_tail: np.ndarray   # int32
    a_head: np.ndarray   # int32
    a_kind: np.ndarray   # int8
    a_dh_s: np.ndarray   # deadhead seconds (0 where not applicable)
    a_dh_km: np.ndarray
    theta: np.ndarray    # arc weights

    SOURCE = 0
    SINK = 1

    @property
    def n_vertices(self) -> int:
        return len(self.v_kind)

    @property
    def n_arcs(self) -> int:
        return len(self.a_tail)

    @property
    def n_requests(self) -> int:
        return len(self.requests)

    def vehicle_vertices(self) -> np.ndarray:
        return np.flatnonzero(self.v_kind == V_VEHICLE)

    def with_weights(self, theta: np.ndarray) -> "DispatchGraph":
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != self.a_tail.shape:
            raise ValueError(f"theta length {theta.shape} != arc count {self.n_arcs}")
        return replace(self, theta=theta)

    def predictable_mask(self) -> np.ndarray:
        return np.isin(self.a_kind, PREDICTABLE_KINDS)


def build_graph(state: SystemState, mode: GraphMode, params: GraphParams, tt) -> DispatchGraph:
    """Build the dispatching digraph for one system state.

    BASE wires vehicles and batch requests only; SAMPLE_BASED additionally
    wires the sampled artificial requests by the same reachability rules;
    CELL_BASED splits request vertices and adds one rebalancing vertex per
    grid cell with its chain of capacity vertices.
    """
    if not state.vehicles:
        raise ValueError("cannot build a dispatch graph for an empty fleet")
    t_dec = state.decision_time
    t_next = state.next_decision_time
    horizon_end = t_next + params.horizon_s if mode is not GraphMode.BASE else t_next

    reals = sorted(state.batch, key=lambda r: (r.start_time, r.id))
    if mode is GraphMode.SAMPLE_BASED:
        arts = sorted(params.sampled, key=lambda r: (r.start_time, r.id))
        for r in arts:
            if not (t_next <= r.start_time < horizon_end):
                raise ValueError(
                    f"sampled request {r.id} start {r.start_time} outside "
                    f"prediction horizon [{t_next}, {horizon_end})")
    else:
        arts = []
    if mode is GraphMode.CELL_BASED and (params.grid is None or params.n_capacity < 1):
        raise ValueError("cell-based graphs need a grid and n_capacity >= 1")

    requests: list[Request] = reals + arts
    n_veh = len(state.vehicles)
    n_req = len(requests)
    n_real = len(reals)

    # request table
    r_s = np.array([r.start_time for r in requests], dtype=np.float64)
    r_a = np.array([r.arrival_time for r in requests], dtype=np.float64)
    r_ox = np.array([r.origin.x for r in requests], dtype=np.float64)
    r_oy = np.array([r.origin.y for r in requests], dtype=np.float64)
    r_dx = np.array([r.destination.x for r in requests], dtype=np.float64)
    r_dy = np.array([r.destination.y for r in requests], dtype=np.float64)
    r_p = np.array([r.reward for r in requests], dtype=np.float64)
    r_artificial = np.zeros(n_req, dtype=bool)
    r_artificial[n_real:] = True
    r_service_s, r_service_km = tt.pairwise(r_ox, r_oy, r_dx, r_dy)

    # vehicle exit points
    veh_t = np.empty(n_veh)
    veh_x = np.empty(n_veh)
    veh_y = np.empty(n_veh)
    for i, v in enumerate(state.vehicles):
        avail_t, loc = v.exit_point(t_dec)
        veh_t[i] = avail_t
        veh_x[i] = loc.x
        veh_y[i] = loc.y

    # vertex layout
    split = mode is GraphMode.CELL_BASED
    req_base = 2 + n_veh
    if split:
        req_in = req_base + 2 * np.arange(n_req, dtype=np.int64)
        req_out = req_in + 1
        after_req = req_base + 2 * n_req
    else:
        req_in = req_base + np.arange(n_req, dtype=np.int64)
        req_out = req_in
        after_req = req_base + n_req

    n_cells = params.grid.n_cells if split else 0
    reb_base = after_req
    cap_base = reb_base + n_cells
    n_vertices = cap_base + n_cells * (params.n_capacity if split else 0)

    v_kind = np.empty(n_vertices, dtype=np.int8)
    v_ref = np.zeros(n_vertices, dtype=np.int32)
    v_aux = np.zeros(n_vertices, dtype=np.int32)
    v_time = np.zeros(n_vertices, dtype=np.float64)
    v_x = np.zeros(n_vertices, dtype=np.float64)
    v_y = np.zeros(n_vertices, dtype=np.float64)

    v_kind[DispatchGraph.SOURCE] = V_SOURCE
    v_kind[DispatchGraph.SINK] = V_SINK
    veh_vertices = 2 + np.arange(n_veh, dtype=np.int64)
    v_kind[veh_vertices] = V_VEHICLE
    v_ref[veh_vertices] = np.arange(n_veh)
    v_time[veh_vertices] = veh_t
    v_x[veh_vertices] = veh_x
    v_y[veh_vertices] = veh_y

    req_kind = np.where(r_artificial, V_ARTIFICIAL, V_REQUEST).astype(np.int8)
    v_kind[req_in] = req_kind
    v_ref[req_in] = np.arange(n_req)
    v_time[req_in] = r_a
    v_x[req_in] = r_dx
    v_y[req_in] = r_dy
    if split:
        v_kind[req_out] = V_REQUEST_OUT
        v_ref[req_out] = np.arange(n_req)
        v_time[req_out] = r_a
        v_x[req_out] = r_dx
        v_y[req_out] = r_dy

    if split:
        cells = np.arange(n_cells, dtype=np.int64)
        cx, cy = params.grid.cell_centers()
        reb_vertices = reb_base + cells
        v_kind[reb_vertices] = V_REBALANCE
        v_ref[reb_vertices] = cells
        v_time[reb_vertices] = horizon_end
        v_x[reb_vertices] = cx
        v_y[reb_vertices] = cy
        n_cap = params.n_capacity
        cap_vertices = cap_base + np.arange(n_cells * n_cap, dtype=np.int64)
        v_kind[cap_vertices] = V_CAPACITY
        v_ref[cap_vertices] = np.repeat(cells, n_cap)
        v_aux[cap_vertices] = np.tile(np.arange(n_cap), n_cells)
        v_time[cap_vertices] = horizon_end
        v_x[cap_vertices] = np.repeat(cx, n_cap)
        v_y[cap_vertices] = np.repeat(cy, n_cap)

    # arcs, assembled kind by kind in a fixed deterministic order
    tails, heads, kinds, dh_s_list, dh_km_list = [], [], [], [], []

    def add(tail, head, kind, dh_s=None, dh_km=None):
        tail = np.asarray(tail, dtype=np.int32).ravel()
        head = np.asarray(head, dtype=np.int32).ravel()
        tails.append(tail)
        heads.append(head)
        kinds.append(np.full(len(tail), kind, dtype=np.int8))
        z = np.zeros(len(tail))
        dh_s_list.append(z if dh_s is None else np.asarray(dh_s, dtype=np.float64).ravel())
        dh_km_list.append(z if dh_km is None else np.asarray(dh_km, dtype=np.float64).ravel())

    add(np.full(n_veh, DispatchGraph.SOURCE), veh_vertices, A_SRC)

    if n_req:
        # vehicle -> request: reachable when the vehicle's exit point can make
        # the request's start time
        sec, km = tt.pairwise(veh_x[:, None], veh_y[:, None], r_ox[None, :], r_oy[None, :])
        feas = veh_t[:, None] + sec <= r_s[None, :]
        vi, rj = np.nonzero(feas)
        add(veh_vertices[vi], req_in[rj], A_DISPATCH, sec[vi, rj], km[vi, rj])

        # request -> request chaining
        sec, km = tt.pairwise(r_dx[:, None], r_dy[:, None], r_ox[None, :], r_oy[None, :])
        feas = r_a[:, None] + sec <= r_s[None, :]
        np.fill_diagonal(feas, False)
        ri, rj = np.nonzero(feas)
        add(req_out[ri], req_in[rj], A_CHAIN, sec[ri, rj], km[ri, rj])

    add(veh_vertices, np.full(n_veh, DispatchGraph.SINK), A_SINK)
    if n_req:
        add(req_out, np.full(n_req, DispatchGraph.SINK), A_SINK)
        if split:
            add(req_in, req_out, A_SPLIT)

    if split:
        # any vehicle or request exit that can reach a cell center before the
        # horizon end gets an arc to that cell's rebalancing vertex
        ex_vertex = np.concatenate([veh_vertices, req_out])
        ex_t = np.concatenate([veh_t, r_a])
        ex_x = np.concatenate([veh_x, r_dx])
        ex_y = np.concatenate([veh_y, r_dy])
        sec, km = tt.pairwise(ex_x[:, None], ex_y[:, None], cx[None, :], cy[None, :])
        feas = ex_t[:, None] + sec <= horizon_end
        ei, cj = np.nonzero(feas)
        add(ex_vertex[ei], reb_vertices[cj], A_TO_REB, sec[ei, cj], km[ei, cj])

        add(np.repeat(reb_vertices, n_cap), cap_vertices, A_REB_CAP)
        add(cap_vertices, np.full(len(cap_vertices), DispatchGraph.SINK), A_CAP_SINK)

    a_tail = np.concatenate(tails)
    a_head = np.concatenate(heads)
    a_kind = np.concatenate(kinds)
    a_dh_s = np.concatenate(dh_s_list)
    a_dh_km = np.concatenate(dh_km_list)

    return DispatchGraph(
        mode=mode, k=n_veh, epoch=state.epoch, period_s=state.period_s,
        decision_time=t_dec, horizon_end=horizon_end,
        grid=params.grid if split else params.grid,
        v_kind=v_kind, v_ref=v_ref, v_aux=v_aux, v_time=v_time, v_x=v_x, v_y=v_y,
        requests=tuple(requests), r_s=r_s, r_a=r_a, r_ox=r_ox, r_oy=r_oy,
        r_dx=r_dx, r_dy=r_dy, r_p=r_p, r_service_s=r_service_s,
        r_service_km=r_service_km, r_artificial=r_artificial,
        req_vertex_in=req_in, req_vertex_out=req_out,
        a_tail=a_tail, a_head=a_head, a_kind=a_kind,
        a_dh_s=a_dh_s, a_dh_km=a_dh_km,
        theta=np.zeros(len(a_tail)),
    )


def sparsify(graph: DispatchGraph, t_max_s: float = np.inf,
             d_max_km: float = np.inf) -> DispatchGraph:
    """Drop arcs implying a downtime above t_max_s or a deadhead above d_max_km.

    The temporal cut applies to vehicle->request and request->request arcs;
    the spatial cut to every deadhead-bearing arc. Vertices are unchanged.
    """
    if t_max_s <= 0 or d_max_km <= 0:
        raise ValueError("cuts must be positive")
    keep = np.ones(graph.n_arcs, dtype=bool)

    temporal = np.flatnonzero(np.isin(graph.a_kind, (A_DISPATCH, A_CHAIN)))
    if np.isfinite(t_max_s) and len(temporal):
        head_req = graph.v_ref[graph.a_head[temporal]]
        gap = graph.r_s[head_req] - graph.v_time[graph.a_tail[temporal]]
        keep[temporal[gap > t_max_s]] = False

    if np.isfinite(d_max_km):
        spatial = np.isin(graph.a_kind, (A_DISPATCH, A_CHAIN, A_TO_REB))
        keep &= ~(spatial & (graph.a_dh_km > d_max_km))

    if keep.all():
        return graph
    return replace(
        graph,
        a_tail=graph.a_tail[keep], a_head=graph.a_head[keep],
        a_kind=graph.a_kind[keep], a_dh_s=graph.a_dh_s[keep],
        a_dh_km=graph.a_dh_km[keep], theta=graph.theta[keep],
    )


def topological_order(graph: DispatchGraph) -> np.ndarray:
    """Vertex order with all arcs forward; raises if the graph has a cycle."""
    n = graph.n_vertices
    indeg = np.zeros(n, dtype=np.int64)
    np.add.at(indeg, graph.a_head, 1)
    order_heads = np.argsort(graph.a_tail, kind="stable")
    starts = np.searchsorted(graph.a_tail[order_heads], np.arange(n + 1))
    out: list[int] = []
    queue = list(np.flatnonzero(indeg == 0))
    while queue:
        u = queue.pop()
        out.append(u)
        for j in order_heads[starts[u]:starts[u + 1]]:
            h = graph.a_head[j]
            indeg[h] -= 1
            if indeg[h] == 0:
                queue.append(h)
    if len(out) != n:
        raise ValueError("dispatch graph contains a cycle")
    return np.array(out)
