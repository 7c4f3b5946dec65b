import numpy as np
import pytest

from amodfleet.demand import RebalancingGrid
from amodfleet.digraph import (
    A_CAP_SINK, A_CHAIN, A_DISPATCH, A_REB_CAP, A_SINK, A_SPLIT, A_SRC,
    A_TO_REB, GraphMode, GraphParams, V_ARTIFICIAL, V_CAPACITY, V_REBALANCE,
    V_REQUEST, V_REQUEST_OUT, V_VEHICLE, build_graph, sparsify,
    topological_order,
)
from amodfleet.model import Location, Request, SystemState, VehicleState


def _req(rid, ox, oy, dx, dy, s, a, p=5.0):
    return Request(rid, Location(ox, oy), Location(dx, dy), s, a, p)


def test_base_graph_no_requests(tt_line):
    state = SystemState(epoch=1, period_s=60.0, batch=(),
                        vehicles=(VehicleState(0, Location(10.0, 10.0)),
                                  VehicleState(1, Location(20.0, 20.0))))
    g = build_graph(state, GraphMode.BASE, GraphParams(), tt_line)
    assert int(np.sum(g.v_kind == V_VEHICLE)) == 2
    assert g.n_arcs == 4  # source->v and v->sink only
    assert set(g.a_kind.tolist()) == {A_SRC, A_SINK}
    topological_order(g)


def test_chain_arcs_follow_reachability(tt_line):
    # r1 dropoff at (1000,0) at t=200; r2 starts at (1500,0) at t=270:
    # tau = 60 s so 200+60 <= 270 allows the chain; r2 -> r1 must not exist.
    v = VehicleState(0, Location(0.0, 0.0))
    r1 = _req(1, 100.0, 0.0, 1000.0, 0.0, 20.0, 200.0)
    r2 = _req(2, 1500.0, 0.0, 2000.0, 0.0, 270.0, 330.0)
    state = SystemState(epoch=1, period_s=300.0, batch=(r1, r2), vehicles=(v,))
    g = build_graph(state, GraphMode.BASE, GraphParams(), tt_line)
    arcs = {(int(g.a_tail[j]), int(g.a_head[j])) for j in range(g.n_arcs)
            if g.a_kind[j] in (A_DISPATCH, A_CHAIN)}
    v1 = int(g.vehicle_vertices()[0])
    r1v = int(g.req_vertex_in[0])
    r2v = int(g.req_vertex_in[1])
    assert (v1, r1v) in arcs           # vehicle reaches r1 (12 s away)
    assert (r1v, r2v) in arcs          # chain feasible
    assert (r2v, r1v) not in arcs      # backwards in time
    # vehicle cannot reach r2 directly: 1.5 km = 180 s > 270? 180 <= 270 feasible
    assert (v1, r2v) in arcs
    topological_order(g)


def test_sample_based_graph_wires_artificial_requests(tt_line):
    v = VehicleState(0, Location(0.0, 0.0))
    r = _req(1, 100.0, 0.0, 1000.0, 0.0, 20.0, 128.0)
    art = _req(-1, 1200.0, 0.0, 1800.0, 0.0, 200.0, 272.0)
    state = SystemState(epoch=1, period_s=60.0, batch=(r,), vehicles=(v,))
    g = build_graph(state, GraphMode.SAMPLE_BASED,
                    GraphParams(horizon_s=300.0, sampled=(art,)), tt_line)
    assert int(np.sum(g.v_kind == V_ARTIFICIAL)) == 1
    arcs = {(int(g.a_tail[j]), int(g.a_head[j])) for j in range(g.n_arcs)}
    # chain real -> artificial: 128 + tau(1000,1200)=24s <= 200
    assert (int(g.req_vertex_out[0]), int(g.req_vertex_in[1])) in arcs
    # artificial -> real impossible by construction
    assert (int(g.req_vertex_out[1]), int(g.req_vertex_in[0])) not in arcs
    topological_order(g)


def test_sampled_request_outside_horizon_rejected(tt_line):
    v = VehicleState(0, Location(0.0, 0.0))
    late = _req(-1, 100.0, 0.0, 200.0, 0.0, 1000.0, 1012.0)
    state = SystemState(epoch=1, period_s=60.0, batch=(), vehicles=(v,))
    with pytest.raises(ValueError):
        build_graph(state, GraphMode.SAMPLE_BASED,
                    GraphParams(horizon_s=300.0, sampled=(late,)), tt_line)


def test_cell_based_adds_one_rebalance_and_capacity_per_cell(tt_line):
    grid = RebalancingGrid(0.0, 0.0, 1000.0, 1000.0, cell_w=500.0, cell_h=500.0)
    v = VehicleState(0, Location(250.0, 250.0))
    r = _req(1, 260.0, 260.0, 700.0, 700.0, 30.0, 104.0)
    state = SystemState(epoch=1, period_s=60.0, batch=(r,), vehicles=(v,))
    g = build_graph(state, GraphMode.CELL_BASED,
                    GraphParams(horizon_s=600.0, grid=grid, n_capacity=1), tt_line)
    assert int(np.sum(g.v_kind == V_REBALANCE)) == 4
    assert int(np.sum(g.v_kind == V_CAPACITY)) == 4
    # request split in two with a zero-weight connector
    assert int(np.sum(g.v_kind == V_REQUEST)) == 1
    assert int(np.sum(g.v_kind == V_REQUEST_OUT)) == 1
    split = np.flatnonzero(g.a_kind == A_SPLIT)
    assert len(split) == 1 and g.theta[split[0]] == 0.0
    # every capacity vertex reaches the sink; rebalance vertices only via capacity
    cap_sink = np.flatnonzero(g.a_kind == A_CAP_SINK)
    assert len(cap_sink) == 4
    reb_out_kinds = set(
        g.a_kind[j] for j in range(g.n_arcs)
        if g.v_kind[g.a_tail[j]] == V_REBALANCE)
    assert reb_out_kinds == {A_REB_CAP}
    topological_order(g)


def test_cell_based_capacity_count(tt_line):
    grid = RebalancingGrid(0.0, 0.0, 1000.0, 1000.0, cell_w=500.0, cell_h=500.0)
    v = VehicleState(0, Location(250.0, 250.0))
    state = SystemState(epoch=1, period_s=60.0, batch=(), vehicles=(v,))
    g = build_graph(state, GraphMode.CELL_BASED,
                    GraphParams(horizon_s=600.0, grid=grid, n_capacity=3), tt_line)
    assert int(np.sum(g.v_kind == V_CAPACITY)) == 12
    slots = g.v_aux[g.v_kind == V_CAPACITY]
    assert sorted(slots.tolist()) == sorted([0, 1, 2] * 4)


def test_empty_fleet_rejected(tt_line):
    state = SystemState(epoch=1, period_s=60.0, batch=(), vehicles=())
    with pytest.raises(ValueError):
        build_graph(state, GraphMode.BASE, GraphParams(), tt_line)


def test_pending_vehicle_exit_point_drives_arcs(tt_line):
    pending = _req(9, 0.0, 0.0, 1000.0, 0.0, 10.0, 130.0)
    v = VehicleState(0, Location(500.0, 0.0), (pending,))
    # reachable only from the pending dropoff, not the current position:
    # from dropoff (1000,0) at t=130: tau to (1200,0) = 24 s -> 154 <= 170
    r = _req(1, 1200.0, 0.0, 1500.0, 0.0, 170.0, 206.0)
    state = SystemState(epoch=2, period_s=60.0, batch=(r,), vehicles=(v,))
    g = build_graph(state, GraphMode.BASE, GraphParams(), tt_line)
    vv = int(g.vehicle_vertices()[0])
    assert g.v_time[vv] == 130.0
    assert (g.v_x[vv], g.v_y[vv]) == (1000.0, 0.0)
    arcs = {(int(g.a_tail[j]), int(g.a_head[j])) for j in range(g.n_arcs)}
    assert (vv, int(g.req_vertex_in[0])) in arcs


def _sparsify_fixture(tt_line):
    v = VehicleState(0, Location(0.0, 0.0))
    r1 = _req(1, 100.0, 0.0, 1000.0, 0.0, 20.0, 128.0)
    # gap r1 -> r2: starts 601 s after r1's arrival, 100 m away
    r2 = _req(2, 1100.0, 0.0, 1500.0, 0.0, 729.0, 777.0)
    state = SystemState(epoch=1, period_s=800.0, batch=(r1, r2), vehicles=(v,))
    return build_graph(state, GraphMode.BASE, GraphParams(), tt_line)


def test_sparsify_infinite_cuts_is_identity(tt_line):
    g = _sparsify_fixture(tt_line)
    assert sparsify(g) is g


def test_sparsify_temporal_cut_strict(tt_line):
    g = _sparsify_fixture(tt_line)
    chain = np.flatnonzero(g.a_kind == A_CHAIN)
    assert len(chain) == 1  # 128 + 12 <= 729 feasible before the cut
    cut = sparsify(g, t_max_s=600.0)
    assert int(np.sum(cut.a_kind == A_CHAIN)) == 0  # gap 601 > 600 removed
    kept = sparsify(g, t_max_s=601.0)
    assert int(np.sum(kept.a_kind == A_CHAIN)) == 1  # boundary is strict


def test_sparsify_spatial_cut(tt_line):
    v = VehicleState(0, Location(0.0, 0.0))
    r = _req(1, 2500.0, 0.0, 3000.0, 0.0, 400.0, 460.0)  # 2.5 km deadhead
    state = SystemState(epoch=1, period_s=500.0, batch=(r,), vehicles=(v,))
    g = build_graph(state, GraphMode.BASE, GraphParams(), tt_line)
    assert int(np.sum(g.a_kind == A_DISPATCH)) == 1
    cut = sparsify(g, d_max_km=2.0)
    assert int(np.sum(cut.a_kind == A_DISPATCH)) == 0
    assert cut.n_vertices == g.n_vertices  # vertices unchanged


def test_sparsify_monotone_arc_counts(toy_world):
    from amodfleet.policies import group_by_epoch
    days = toy_world["days"]
    state = SystemState(epoch=1, period_s=600.0,
                        batch=tuple(r for r in days[0] if r.start_time < 600.0),
                        vehicles=toy_world["fleet"])
    g = build_graph(state, GraphMode.BASE, GraphParams(), toy_world["tt"])
    counts = [sparsify(g, t_max_s=t, d_max_km=d).n_arcs
              for t, d in [(np.inf, np.inf), (600.0, 2.0), (300.0, 1.0), (120.0, 0.5)]]
    assert counts == sorted(counts, reverse=True)
    assert counts[-1] < counts[0]
