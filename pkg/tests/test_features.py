import numpy as np
import pytest

from amodfleet.demand import RebalancingGrid
from amodfleet.digraph import (
    A_REB_CAP, A_SPLIT, A_SRC, GraphMode, GraphParams, build_graph,
)
from amodfleet.features import (
    CB_SCHEMA, SB_SCHEMA, FeatureContext, ModelWeights, compute_features,
    feature_matrix, load_model, normalization_divisors, predict_weights,
    save_model, schema_by_name,
)
from amodfleet.kdspp import DisjointnessMode, solve
from amodfleet.model import Location, Objective, Request, SystemState, VehicleState


def test_schema_shapes():
    assert SB_SCHEMA.length == 8 + 8 + (9 + 25) + (5 + 25)
    assert CB_SCHEMA.length == 8 + 8 + 9 + 5 + 14 + 2 + 15
    assert len(SB_SCHEMA.feature_names()) == SB_SCHEMA.length
    assert schema_by_name("sb") is SB_SCHEMA
    with pytest.raises(KeyError):
        schema_by_name("nope")


@pytest.fixture()
def sb_setup(toy_world):
    w = toy_world
    batch = tuple(r for r in w["days"][0] if r.start_time < 60.0)
    state = SystemState(epoch=1, period_s=60.0, batch=batch, vehicles=w["fleet"])
    from amodfleet.demand import sample_artificial_requests
    sampled = tuple(sample_artificial_requests(w["dist"], 60.0, 360.0, seed=4))
    g = build_graph(state, GraphMode.SAMPLE_BASED,
                    GraphParams(horizon_s=300.0, sampled=sampled), w["tt"])
    ctx = FeatureContext(state, w["grid"], w["objective"], w["dist"])
    return g, ctx, state


def test_source_arc_features_are_zero(sb_setup):
    g, ctx, _ = sb_setup
    src = int(np.flatnonzero(g.a_kind == A_SRC)[0])
    row = compute_features(src, g, ctx, SB_SCHEMA)
    assert np.all(row == 0.0)


def test_reward_per_duration_slot(tt_line):
    grid = RebalancingGrid(0.0, 0.0, 5000.0, 5000.0)
    # request with reward 8 and 400 s duration: ratio slot = 0.02 per second
    r = Request(1, Location(100.0, 0.0), Location(100.0 + 10 / 3 * 1000, 0.0),
                30.0, 430.0, 8.0)
    state = SystemState(epoch=1, period_s=60.0, batch=(r,),
                        vehicles=(VehicleState(0, Location(50.0, 0.0)),))
    g = build_graph(state, GraphMode.BASE, GraphParams(), tt_line)
    ctx = FeatureContext(state, grid, Objective.profit())
    arc = int(np.flatnonzero(g.a_kind == 1)[0])  # the dispatch arc
    row = compute_features(arc, g, ctx, SB_SCHEMA)
    lo, _hi = SB_SCHEMA.offset("request")
    names = SB_SCHEMA.groups[2][1]
    assert row[lo + names.index("duration_s")] == pytest.approx(400.0)
    assert row[lo + names.index("reward_per_duration")] == pytest.approx(0.02)
    assert row[lo + names.index("reward")] == 8.0


def test_capacity_slot_index_feature(toy_world):
    w = toy_world
    state = SystemState(epoch=1, period_s=60.0, batch=(), vehicles=w["fleet"])
    g = build_graph(state, GraphMode.CELL_BASED,
                    GraphParams(horizon_s=300.0, grid=w["grid"], n_capacity=3),
                    w["tt"])
    ctx = FeatureContext(state, w["grid"], w["objective"], w["dist"])
    arcs = np.flatnonzero(g.a_kind == A_REB_CAP)
    rows = feature_matrix(g, ctx, CB_SCHEMA, arcs)
    lo, hi = CB_SCHEMA.offset("capacity")
    slot_col = hi - 1
    slots = g.v_aux[g.a_head[arcs]]
    assert np.array_equal(rows[:, slot_col], slots.astype(float))
    assert 2.0 in rows[:, slot_col]


def test_all_features_finite(sb_setup):
    g, ctx, _ = sb_setup
    phi = feature_matrix(g, ctx, SB_SCHEMA)
    assert np.all(np.isfinite(phi))


def test_predictor_linear_in_weights(sb_setup):
    g, ctx, _ = sb_setup
    rng = np.random.default_rng(0)
    w1 = rng.normal(size=SB_SCHEMA.length)
    w2 = rng.normal(size=SB_SCHEMA.length)
    t1 = predict_weights(ModelWeights(SB_SCHEMA, w1), g, ctx).theta
    t2 = predict_weights(ModelWeights(SB_SCHEMA, w2), g, ctx).theta
    t12 = predict_weights(ModelWeights(SB_SCHEMA, w1 + w2), g, ctx).theta
    assert np.allclose(t12, t1 + t2, atol=1e-12)


def test_zero_weights_zero_thetas_and_scaling(sb_setup):
    g, ctx, _ = sb_setup
    zero = predict_weights(ModelWeights(SB_SCHEMA, np.zeros(SB_SCHEMA.length)), g, ctx)
    assert np.all(zero.theta == 0.0)
    rng = np.random.default_rng(1)
    w = rng.normal(size=SB_SCHEMA.length)
    g1 = predict_weights(ModelWeights(SB_SCHEMA, w), g, ctx)
    g2 = predict_weights(ModelWeights(SB_SCHEMA, 2.0 * w), g, ctx)
    assert np.allclose(g2.theta, 2.0 * g1.theta)
    s1 = solve(g1, DisjointnessMode.VERTEX)
    s2 = solve(g2, DisjointnessMode.VERTEX)
    assert s2.objective == pytest.approx(2.0 * s1.objective, rel=1e-9)


def test_split_and_terminal_arcs_never_predicted(toy_world):
    w = toy_world
    batch = tuple(r for r in w["days"][0] if r.start_time < 60.0)
    state = SystemState(epoch=1, period_s=60.0, batch=batch, vehicles=w["fleet"])
    g = build_graph(state, GraphMode.CELL_BASED,
                    GraphParams(horizon_s=300.0, grid=w["grid"], n_capacity=1),
                    w["tt"])
    ctx = FeatureContext(state, w["grid"], w["objective"], w["dist"])
    rng = np.random.default_rng(3)
    out = predict_weights(
        ModelWeights(CB_SCHEMA, rng.normal(size=CB_SCHEMA.length)), g, ctx)
    frozen = ~out.predictable_mask()
    assert np.all(out.theta[frozen] == 0.0)
    assert np.any(out.theta != 0.0)
    assert np.all(out.theta[out.a_kind == A_SPLIT] == 0.0)


def test_model_file_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(9)
    model = ModelWeights(SB_SCHEMA, rng.normal(size=SB_SCHEMA.length),
                         divisors=np.abs(rng.normal(size=SB_SCHEMA.length)) + 0.1,
                         metadata={"seed": 9, "n_instances": 4})
    p1 = tmp_path / "m1.json"
    p2 = tmp_path / "m2.json"
    save_model(model, p1)
    back = load_model(p1)
    assert np.array_equal(back.w, model.w)
    assert np.array_equal(back.divisors, model.divisors)
    assert back.schema is SB_SCHEMA
    save_model(back, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_normalization_divisors():
    m = np.array([[1.0, 5.0, 2.0], [3.0, 5.0, 4.0]])
    div = normalization_divisors([m])
    assert div[0] == pytest.approx(1.0)   # std of (1,3)
    assert div[1] == 1.0                  # zero variance maps to 1
    assert np.all(div > 0)


def test_divisor_validation():
    with pytest.raises(ValueError):
        ModelWeights(SB_SCHEMA, np.zeros(SB_SCHEMA.length),
                     divisors=np.zeros(SB_SCHEMA.length))
    with pytest.raises(ValueError):
        ModelWeights(SB_SCHEMA, np.zeros(3))
