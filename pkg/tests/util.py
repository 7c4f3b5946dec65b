"""Shared test helpers: hand-built graphs, random DAG instances, enumeration."""
from __future__ import annotations

import numpy as np

from amodfleet.digraph import (
    A_CHAIN, A_DISPATCH, A_SINK, A_SRC, DispatchGraph, GraphMode, V_REQUEST,
    V_SINK, V_SOURCE, V_VEHICLE,
)
from amodfleet.kdspp import DisjointnessMode
from amodfleet.model import Location, Request


def make_test_graph(n_vehicles: int, n_requests: int,
                    middle_arcs: list[tuple[int, int, float]],
                    dispatch_arcs: list[tuple[int, int, float]]) -> DispatchGraph:
    """Build a dispatch-shaped DAG directly from arc lists.

    dispatch_arcs: (vehicle index, request index, weight);
    middle_arcs: (request index i, request index j, weight) with i < j.
    Source/sink wiring is added automatically with zero weights.
    """
    n_v = 2 + n_vehicles + n_requests
    v_kind = np.empty(n_v, dtype=np.int8)
    v_ref = np.zeros(n_v, dtype=np.int32)
    v_kind[0] = V_SOURCE
    v_kind[1] = V_SINK
    veh = 2 + np.arange(n_vehicles)
    req = 2 + n_vehicles + np.arange(n_requests)
    v_kind[veh] = V_VEHICLE
    v_ref[veh] = np.arange(n_vehicles)
    v_kind[req] = V_REQUEST
    v_ref[req] = np.arange(n_requests)

    tails, heads, kinds, weights = [], [], [], []
    for i in range(n_vehicles):
        tails.append(0); heads.append(veh[i]); kinds.append(A_SRC); weights.append(0.0)
    for vi, rj, w in dispatch_arcs:
        tails.append(veh[vi]); heads.append(req[rj]); kinds.append(A_DISPATCH); weights.append(w)
    for ri, rj, w in middle_arcs:
        assert ri < rj, "middle arcs must point forward to stay acyclic"
        tails.append(req[ri]); heads.append(req[rj]); kinds.append(A_CHAIN); weights.append(w)
    for i in range(n_vehicles):
        tails.append(veh[i]); heads.append(1); kinds.append(A_SINK); weights.append(0.0)
    for j in range(n_requests):
        tails.append(req[j]); heads.append(1); kinds.append(A_SINK); weights.append(0.0)

    n_a = len(tails)
    dummy_loc = Location(0.0, 0.0)
    requests = tuple(
        Request(j, dummy_loc, dummy_loc, float(j), float(j) + 1.0, 1.0)
        for j in range(n_requests))
    zeros_req = np.zeros(n_requests)
    return DispatchGraph(
        mode=GraphMode.BASE, k=n_vehicles, epoch=1, period_s=60.0,
        decision_time=0.0, horizon_end=60.0, grid=None,
        v_kind=v_kind, v_ref=v_ref, v_aux=np.zeros(n_v, dtype=np.int32),
        v_time=np.zeros(n_v), v_x=np.zeros(n_v), v_y=np.zeros(n_v),
        requests=requests, r_s=np.arange(n_requests, dtype=float),
        r_a=np.arange(n_requests, dtype=float) + 1.0,
        r_ox=zeros_req, r_oy=zeros_req, r_dx=zeros_req, r_dy=zeros_req,
        r_p=np.ones(n_requests), r_service_s=zeros_req, r_service_km=zeros_req,
        r_artificial=np.zeros(n_requests, dtype=bool),
        req_vertex_in=req.astype(np.int64), req_vertex_out=req.astype(np.int64),
        a_tail=np.array(tails, dtype=np.int32), a_head=np.array(heads, dtype=np.int32),
        a_kind=np.array(kinds, dtype=np.int8),
        a_dh_s=np.zeros(n_a), a_dh_km=np.zeros(n_a),
        theta=np.array(weights, dtype=np.float64),
    )


def random_dispatch_dag(rng: np.random.Generator, max_vehicles: int = 3,
                        max_requests: int = 9, weight_scale: float = 5.0
                        ) -> DispatchGraph:
    """Random dispatch-shaped DAG with signed weights."""
    n_veh = int(rng.integers(1, max_vehicles + 1))
    n_req = int(rng.integers(0, max_requests + 1))
    dispatch = []
    for vi in range(n_veh):
        for rj in range(n_req):
            if rng.random() < 0.55:
                dispatch.append((vi, rj, float(rng.normal(0, weight_scale))))
    middle = []
    for ri in range(n_req):
        for rj in range(ri + 1, n_req):
            if rng.random() < 0.4:
                middle.append((ri, rj, float(rng.normal(0, weight_scale))))
    return make_test_graph(n_veh, n_req, middle, dispatch)


def enumerate_all_solutions(graph: DispatchGraph, mode: DisjointnessMode) -> np.ndarray:
    """All feasible arc-indicator vectors (rows), by exhaustive enumeration."""
    adj: dict[int, list[tuple[int, int]]] = {}
    for j in range(graph.n_arcs):
        adj.setdefault(int(graph.a_tail[j]), []).append((j, int(graph.a_head[j])))
    veh_vertices = graph.vehicle_vertices()
    src_arc = {int(graph.a_head[j]): j
               for j in np.flatnonzero(graph.a_kind == A_SRC)}

    def paths_from(v):
        out = []

        def walk(u, vertices, arcs):
            if u == DispatchGraph.SINK:
                out.append((tuple(vertices), tuple(arcs)))
                return
            for arc_id, head in adj.get(u, ()):
                walk(head, vertices + [head], arcs + [arc_id])

        walk(v, [v], [src_arc[v]])
        return out

    choices = [paths_from(int(v)) for v in veh_vertices]
    masks: list[np.ndarray] = []

    def rec(idx, vertices, arcs):
        if idx == len(choices):
            m = np.zeros(graph.n_arcs, dtype=bool)
            m[list(arcs)] = True
            masks.append(m)
            return
        for verts, path_arcs in choices[idx]:
            if any(a in arcs for a in path_arcs):
                continue
            inner = [v for v in verts[:-1]]
            if mode is DisjointnessMode.VERTEX and any(v in vertices for v in inner):
                continue
            rec(idx + 1, vertices | set(inner), arcs | set(path_arcs))

    rec(0, set(), set())
    return np.array(masks)
