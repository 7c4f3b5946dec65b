"""Exact maximum-weight k disjoint source->sink paths on a dispatch graph.

The problem reduces to a min-cost flow of value k with negated weights and
unit capacities; vertex splitting enforces vertex-disjointness when asked.
`solve` is exact; `brute_force_oracle` enumerates and exists for tests.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import _flow
from .digraph import (A_SINK, A_SRC, DispatchGraph, V_VEHICLE)

__all__ = [
    "DisjointnessMode",
    "PathSolution",
    "SolverError",
    "solve",
    "optimality_certificate",
    "brute_force_oracle",
    "validate_path_solution",
]

OBJECTIVE_TOL = 1e-9


class SolverError(ValueError):
    pass


class DisjointnessMode(Enum):
    VERTEX = "vertex"
    ARC = "arc"


@dataclass(frozen=True)
class PathSolution:
    """k disjoint paths as an arc indicator plus the decomposed vertex walks."""

    arc_mask: np.ndarray
    paths: tuple[tuple[int, ...], ...]
    objective: float


def _structural_arrays(graph: DispatchGraph, k: int | None):
    veh_vertices = graph.vehicle_vertices()
    n_veh = len(veh_vertices)
    if k is None:
        k = graph.k
    if k != n_veh:
        raise SolverError(f"k={k} but graph has {n_veh} vehicle vertices")
    if n_veh == 0:
        raise SolverError("graph has no vehicle vertices")

    src_arcs = np.flatnonzero(graph.a_kind == A_SRC)
    sink_arcs = np.flatnonzero(
        (graph.a_kind == A_SINK) & (graph.v_kind[graph.a_tail] == V_VEHICLE))
    by_head = {int(graph.a_head[j]): int(j) for j in src_arcs}
    by_tail = {int(graph.a_tail[j]): int(j) for j in sink_arcs}
    veh_src = np.empty(n_veh, dtype=np.int64)
    veh_sink = np.empty(n_veh, dtype=np.int64)
    for i, v in enumerate(veh_vertices):
        if int(v) not in by_head or int(v) not in by_tail:
            raise SolverError(f"vehicle vertex {v} lacks a source or sink arc")
        veh_src[i] = by_head[int(v)]
        veh_sink[i] = by_tail[int(v)]
    zero_arcs = np.concatenate([src_arcs, sink_arcs])
    if np.any(graph.theta[zero_arcs] != 0.0):
        raise SolverError("source and vehicle sink arcs must carry zero weight")
    return k, veh_vertices, veh_src, veh_sink


def _assemble(graph: DispatchGraph, mode: DisjointnessMode, k, veh_src, veh_sink):
    """Split vertices and lay out paired directed arcs for the flow kernel."""
    n_v = graph.n_vertices
    n_a = graph.n_arcs
    n_logical = n_v + n_a

    if mode is DisjointnessMode.VERTEX:
        v_caps = np.ones(n_v, dtype=np.int64)
    else:
        v_caps = np.full(n_v, k, dtype=np.int64)
    v_caps[DispatchGraph.SOURCE] = k
    v_caps[DispatchGraph.SINK] = k

    ids = np.arange(n_v, dtype=np.int64)
    fwd_tail = np.concatenate([2 * ids, 2 * graph.a_tail.astype(np.int64) + 1])
    fwd_head = np.concatenate([2 * ids + 1, 2 * graph.a_head.astype(np.int64)])
    fwd_cost = np.concatenate([np.zeros(n_v), -graph.theta])
    fwd_cap = np.concatenate([v_caps, np.ones(n_a, dtype=np.int64)])

    d_tail = np.empty(2 * n_logical, dtype=np.int64)
    d_head = np.empty(2 * n_logical, dtype=np.int64)
    d_cost = np.empty(2 * n_logical)
    d_cap = np.empty(2 * n_logical, dtype=np.int64)
    d_tail[0::2] = fwd_tail
    d_tail[1::2] = fwd_head
    d_head[0::2] = fwd_head
    d_head[1::2] = fwd_tail
    d_cost[0::2] = fwd_cost
    d_cost[1::2] = -fwd_cost
    d_cap[0::2] = fwd_cap
    d_cap[1::2] = 0

    order = np.argsort(d_tail, kind="stable")
    n_nodes = 2 * n_v
    csr_start = np.searchsorted(d_tail[order], np.arange(n_nodes + 1))

    src_node = 2 * DispatchGraph.SOURCE + 1  # out(source)
    dst_node = 2 * DispatchGraph.SINK       # in(sink)
    veh_vertices = graph.vehicle_vertices()
    fill_a = 2 * (n_v + veh_src)                       # source arc, directed id
    fill_b = 2 * veh_vertices.astype(np.int64)         # vehicle split arc
    fill_c = 2 * (n_v + veh_sink)                      # vehicle sink arc
    return (n_nodes, csr_start.astype(np.int64), order, d_head, d_cost, d_cap,
            src_node, dst_node, fill_a, fill_b, fill_c, fwd_cap)


def _decompose(graph: DispatchGraph, arc_flow: np.ndarray) -> tuple[tuple[int, ...], ...]:
    """Walk the flow into k source->sink paths, lowest arc index first."""
    flowed = np.flatnonzero(arc_flow)
    by_tail: dict[int, list[int]] = {}
    for j in flowed:
        by_tail.setdefault(int(graph.a_tail[j]), []).append(int(j))
    cursor = {t: 0 for t in by_tail}
    paths = []
    for j in flowed:
        if graph.a_kind[j] != A_SRC:
            continue
        path = [DispatchGraph.SOURCE]
        u = int(graph.a_head[j])
        cursor[DispatchGraph.SOURCE] += 1
        while u != DispatchGraph.SINK:
            path.append(u)
            arcs = by_tail.get(u)
            pos = cursor[u]
            if arcs is None or pos >= len(arcs):
                raise SolverError(f"flow decomposition stuck at vertex {u}")
            cursor[u] = pos + 1
            u = int(graph.a_head[arcs[pos]])
        path.append(DispatchGraph.SINK)
        paths.append(tuple(path))
    return tuple(paths)


def _run(graph: DispatchGraph, mode: DisjointnessMode, k: int | None):
    k, veh_vertices, veh_src, veh_sink = _structural_arrays(graph, k)
    (n_nodes, csr_start, order, d_head, d_cost, d_cap, src, dst,
     fill_a, fill_b, fill_c, fwd_cap) = _assemble(graph, mode, k, veh_src, veh_sink)
    cap = d_cap.copy()
    total_cost, pi, n_aug, status = _flow.solve_ssp(
        n_nodes, csr_start, order, d_head, d_cost, cap, src, dst, k,
        fill_a, fill_b, fill_c)
    if status != _flow.STATUS_OK:
        raise SolverError("no feasible k-path routing (missing source/sink arcs?)")
    n_v = graph.n_vertices
    flow = fwd_cap - cap[0::2]
    arc_flow = flow[n_v:]
    return k, total_cost, pi, arc_flow, (csr_start, order, d_head, d_cost, cap, n_nodes)


def solve(graph: DispatchGraph, mode: DisjointnessMode = DisjointnessMode.VERTEX,
          k: int | None = None) -> PathSolution:
    """Maximum total-weight set of k disjoint source->sink paths.

    Exact: the objective equals minus the optimal flow cost. Deterministic:
    ties break toward lower vertex indices in the shortest-path search and
    toward lower arc indices in the decomposition.
    """
    k, total_cost, _pi, arc_flow, _net = _run(graph, mode, k)
    mask = arc_flow == 1
    objective = float(graph.theta[mask].sum())
    if abs(objective + total_cost) > OBJECTIVE_TOL * max(1.0, abs(objective)):
        raise SolverError(
            f"objective {objective} inconsistent with flow cost {-total_cost}")
    paths = _decompose(graph, arc_flow)
    if len(paths) != k:
        raise SolverError(f"decomposed {len(paths)} paths, expected {k}")
    return PathSolution(arc_mask=mask, paths=paths, objective=objective)


def optimality_certificate(graph: DispatchGraph, mode: DisjointnessMode,
                           k: int | None = None) -> float:
    """Minimum reduced cost over residual arcs at termination (>= -1e-9 when
    the returned flow is optimal)."""
    _k, _cost, pi, _arc_flow, net = _run(graph, mode, k)
    csr_start, order, d_head, d_cost, cap, n_nodes = net
    return float(_flow.min_reduced_cost(csr_start, order, d_head, d_cost, cap, pi, n_nodes))


def brute_force_oracle(graph: DispatchGraph, mode: DisjointnessMode = DisjointnessMode.VERTEX,
                       k: int | None = None, max_nonterminal: int = 16) -> PathSolution:
    """Exhaustive enumeration over per-vehicle path choices; test oracle only."""
    if graph.n_vertices - 2 > max_nonterminal:
        raise SolverError(
            f"{graph.n_vertices - 2} non-terminal vertices exceed the "
            f"enumeration guard ({max_nonterminal})")
    k, veh_vertices, _src, _sink = _structural_arrays(graph, k)

    adj: dict[int, list[tuple[int, int]]] = {}
    for j in range(graph.n_arcs):
        adj.setdefault(int(graph.a_tail[j]), []).append((int(j), int(graph.a_head[j])))
    src_arc_of = {int(graph.a_head[j]): int(j)
                  for j in np.flatnonzero(graph.a_kind == A_SRC)}

    def paths_from(v: int):
        out: list[tuple[tuple[int, ...], tuple[int, ...], float]] = []

        def walk(u, vertices, arcs, weight):
            if u == DispatchGraph.SINK:
                out.append((tuple(vertices), tuple(arcs), weight))
                return
            for arc_id, head in adj.get(u, ()):  # noqa: B905
                vertices.append(head)
                arcs.append(arc_id)
                walk(head, vertices, arcs, weight + float(graph.theta[arc_id]))
                vertices.pop()
                arcs.pop()

        walk(v, [v], [], 0.0)
        return out

    choices = [paths_from(int(v)) for v in veh_vertices]
    best = {"weight": -np.inf, "sel": None}

    def feasible(sel_paths, vertices, arcs, idx):
        new_verts, new_arcs, w = choices[idx][sel_paths[idx]]
        for a in new_arcs:
            if a in arcs:
                return None
        if mode is DisjointnessMode.VERTEX:
            for v in new_verts[:-1]:  # sink may repeat
                if v in vertices:
                    return None
        return new_verts, new_arcs, w

    def rec(idx, vertices, arcs, weight, sel):
        if idx == len(choices):
            if weight > best["weight"]:
                best["weight"] = weight
                best["sel"] = list(sel)
            return
        for p in range(len(choices[idx])):
            sel.append(p)
            res = feasible(sel, vertices, arcs, idx)
            if res is not None:
                new_verts, new_arcs, w = res
                used_v = [v for v in new_verts[:-1]]
                vertices.update(used_v)
                arcs.update(new_arcs)
                rec(idx + 1, vertices, arcs, weight + w, sel)
                vertices.difference_update(used_v)
                arcs.difference_update(new_arcs)
            sel.pop()

    rec(0, set(), set(), 0.0, [])
    if best["sel"] is None:
        raise SolverError("no feasible k-path selection found by enumeration")

    mask = np.zeros(graph.n_arcs, dtype=bool)
    paths = []
    for i, p in enumerate(best["sel"]):
        verts, arcs, _w = choices[i][p]
        v0 = verts[0]
        mask[src_arc_of[v0]] = True
        for a in arcs:
            mask[a] = True
        paths.append((DispatchGraph.SOURCE, *verts))
    objective = float(graph.theta[mask].sum())
    return PathSolution(arc_mask=mask, paths=tuple(paths), objective=objective)


def validate_path_solution(graph: DispatchGraph, sol: PathSolution,
                           mode: DisjointnessMode, k: int | None = None) -> None:
    """Raise unless sol is a structurally valid set of k disjoint paths for
    this graph (mask matches paths, disjointness per mode, objective consistent)."""
    if k is None:
        k = graph.k
    if len(sol.paths) != k:
        raise SolverError(f"{len(sol.paths)} paths, expected {k}")
    arc_lookup: dict[tuple[int, int], list[int]] = {}
    for j in range(graph.n_arcs):
        arc_lookup.setdefault((int(graph.a_tail[j]), int(graph.a_head[j])), []).append(j)
    used_arcs: set[int] = set()
    used_vertices: set[int] = set()
    seen_vehicles: set[int] = set()
    for path in sol.paths:
        if path[0] != DispatchGraph.SOURCE or path[-1] != DispatchGraph.SINK:
            raise SolverError(f"path {path} must run source -> sink")
        if graph.v_kind[path[1]] != V_VEHICLE:
            raise SolverError(f"path {path}: second vertex is not a vehicle")
        if path[1] in seen_vehicles:
            raise SolverError(f"vehicle vertex {path[1]} used twice")
        seen_vehicles.add(path[1])
        for u, v in zip(path, path[1:]):
            cands = [j for j in arc_lookup.get((u, v), []) if j not in used_arcs]
            if not cands:
                raise SolverError(f"missing or reused arc ({u}, {v})")
            used_arcs.add(cands[0])
        if mode is DisjointnessMode.VERTEX:
            for v in path[1:-1]:
                if v in used_vertices:
                    raise SolverError(f"vertex {v} shared between vertex-disjoint paths")
                used_vertices.add(v)
    mask_arcs = set(np.flatnonzero(sol.arc_mask).tolist())
    if mask_arcs != used_arcs:
        raise SolverError("arc mask does not match the union of path arcs")
    objective = float(graph.theta[sol.arc_mask].sum())
    if abs(objective - sol.objective) > OBJECTIVE_TOL * max(1.0, abs(objective)):
        raise SolverError(f"objective {sol.objective} != recomputed {objective}")
