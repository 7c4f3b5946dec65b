"""Learning arc weights by imitating full-information solutions.

The loss of a candidate weight vector on one instance is the optimizer's
value at the predicted weights minus the value of the imitated solution,
smoothed by Gaussian perturbations of the parameter vector (sample average
with common random numbers, so the objective is deterministic and convex
piecewise-linear). Its gradient only needs the feature totals of the argmax
and target solutions, one exact solve per perturbation.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import minimize

from .demand import RequestDistribution
from .digraph import (
    DispatchGraph, GraphMode, V_ARTIFICIAL, V_CAPACITY, V_REBALANCE,
)
from .features import (
    CB_SCHEMA, SB_SCHEMA, FeatureContext, FeatureSchema, ModelWeights,
    feature_matrix, normalization_divisors,
)
from .kdspp import (
    DisjointnessMode, PathSolution, SolverError, solve, validate_path_solution,
)
from .model import Objective, Request, VehicleState
from .policies import (
    PolicyKind, PolicySpec, PolicyRuntime, build_policy_graph, group_by_epoch,
    full_information_bound, replay_schedule,
)

__all__ = [
    "TrainingInstance",
    "PerturbationSet",
    "TrainConfig",
    "TrainingError",
    "build_training_set",
    "perturbed_loss_and_gradient",
    "mean_loss_and_gradient",
    "train",
]


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainingInstance:
    """One imitation target: a weighted-digraph skeleton plus the restricted
    full-information solution and the features of its predictable arcs."""

    graph: DispatchGraph
    pred_idx: np.ndarray      # indices of predictable arcs
    phi: np.ndarray           # (len(pred_idx), n_features), unnormalized
    y_mask: np.ndarray        # bool over all arcs: imitated solution
    solve_mode: DisjointnessMode
    meta: dict = field(default_factory=dict)

    @property
    def y_pred(self) -> np.ndarray:
        return self.y_mask[self.pred_idx]


@dataclass(frozen=True)
class PerturbationSet:
    """Fixed Gaussian perturbations of the parameter vector (common random
    numbers across the whole training run)."""

    Z: np.ndarray  # (M, dim)
    sigma: float
    seed: int

    @classmethod
    def draw(cls, seed: int, m: int, dim: int, sigma: float = 1.0) -> "PerturbationSet":
        if m < 1 or sigma <= 0:
            raise ValueError("need M >= 1 and sigma > 0")
        rng = np.random.default_rng(seed)
        return cls(Z=sigma * rng.standard_normal((m, dim)), sigma=sigma, seed=seed)

    @property
    def m(self) -> int:
        return self.Z.shape[0]


@dataclass(frozen=True)
class TrainConfig:
    m_samples: int = 50
    sigma: float = 1.0
    max_iter: int = 100
    gtol: float = 1e-6
    seed: int = 0
    normalize: bool = False


def perturbed_loss_and_gradient(w: np.ndarray, instance: TrainingInstance,
                                perturbations: PerturbationSet,
                                divisors: Optional[np.ndarray] = None
                                ) -> tuple[float, np.ndarray]:
    """Sample-average perturbed imitation loss and its gradient for one instance."""
    phi = instance.phi if divisors is None else instance.phi / divisors
    target = phi[instance.y_pred].sum(axis=0)
    base = float(target @ w)
    theta = np.zeros(instance.graph.n_arcs)
    loss_acc = 0.0
    grad_acc = np.zeros_like(target)
    for z in perturbations.Z:
        theta[instance.pred_idx] = phi @ (w + z)
        sol = solve(instance.graph.with_weights(theta), instance.solve_mode)
        loss_acc += sol.objective
        grad_acc += phi[sol.arc_mask[instance.pred_idx]].sum(axis=0)
    m = perturbations.m
    return loss_acc / m - base, grad_acc / m - target


def mean_loss_and_gradient(w: np.ndarray, instances: Sequence[TrainingInstance],
                           perturbations: PerturbationSet,
                           divisors: Optional[np.ndarray] = None
                           ) -> tuple[float, np.ndarray]:
    total = 0.0
    grad = np.zeros_like(np.asarray(w, dtype=np.float64))
    for i, inst in enumerate(instances):
        try:
            loss, g = perturbed_loss_and_gradient(w, inst, perturbations, divisors)
        except SolverError as exc:
            raise TrainingError(f"solver failed on instance {i} ({inst.meta}): {exc}") from exc
        if not (math.isfinite(loss) and np.all(np.isfinite(g))):
            raise TrainingError(f"non-finite loss/gradient on instance {i} ({inst.meta})")
        total += loss
        grad += g
    n = len(instances)
    return total / n, grad / n


def train(instances: Sequence[TrainingInstance], config: TrainConfig,
          schema: FeatureSchema) -> tuple[ModelWeights, list[dict]]:
    """Minimize the mean perturbed loss with L-BFGS-B.

    Deterministic given the config seed; returns the model plus a per-iteration
    trace (loss, gradient norm, wall time).
    """
    if not instances:
        raise ValueError("empty training set")
    dim = instances[0].phi.shape[1]
    if dim != schema.length:
        raise ValueError(f"instance feature dim {dim} != schema length {schema.length}")
    perts = PerturbationSet.draw(config.seed, config.m_samples, dim, config.sigma)
    divisors = (normalization_divisors([inst.phi for inst in instances])
                if config.normalize else None)

    t0 = time.perf_counter()
    trace: list[dict] = []
    cache: dict = {"x": None, "loss": None, "gnorm": None}

    def fun(w):
        loss, g = mean_loss_and_gradient(w, instances, perts, divisors)
        cache["x"] = np.array(w, copy=True)
        cache["loss"] = float(loss)
        cache["gnorm"] = float(np.linalg.norm(g))
        return loss, g

    def callback(wk):
        # the line search's final evaluation is at the accepted iterate, so the
        # cache normally holds its exact values already
        if cache["x"] is None or not np.array_equal(cache["x"], wk):
            fun(wk)
        trace.append({
            "iteration": len(trace) + 1,
            "loss": cache["loss"],
            "grad_norm": cache["gnorm"],
            "wall_s": time.perf_counter() - t0,
        })

    res = minimize(fun, np.zeros(dim), jac=True, method="L-BFGS-B",
                   callback=callback,
                   options={"maxiter": config.max_iter, "gtol": config.gtol})
    model = ModelWeights(
        schema, np.asarray(res.x, dtype=np.float64), divisors,
        metadata={
            "m_samples": config.m_samples, "sigma": config.sigma,
            "seed": config.seed, "n_instances": len(instances),
            "final_loss": float(res.fun), "iterations": int(res.nit),
            "converged": bool(res.success),
        })
    return model, trace


# -- training-set construction --------------------------------------------------


def _paths_to_mask(graph: DispatchGraph, paths: list[list[int]]) -> np.ndarray:
    lookup: dict[tuple[int, int], int] = {}
    for j in range(graph.n_arcs):
        key = (int(graph.a_tail[j]), int(graph.a_head[j]))
        if key not in lookup:
            lookup[key] = j
    mask = np.zeros(graph.n_arcs, dtype=bool)
    for path in paths:
        for u, v in zip(path, path[1:]):
            mask[lookup[(u, v)]] = True
    return mask


def _restrict_schedule_to_graph(graph: DispatchGraph, state, new_by_vehicle,
                                next_future, spec: PolicySpec, grid
                                ) -> tuple[np.ndarray, list[list[int]]]:
    """Express the full-information schedule as k disjoint paths on this
    epoch's digraph, dropping whatever the online graph cannot represent.

    A scheduled request whose arc is missing (not reachable online, or cut by
    sparsification) truncates that vehicle's path. A deadhead move toward the
    next scheduled request inside the prediction horizon becomes a rebalancing
    label: the nearest unused artificial vertex (sample-based) or the target
    cell's rebalancing vertex with the lowest free capacity slot (cell-based).
    """
    arc_exists: dict[tuple[int, int], int] = {}
    for j in range(graph.n_arcs):
        arc_exists.setdefault((int(graph.a_tail[j]), int(graph.a_head[j])), j)
    req_idx_by_id = {r.id: i for i, r in enumerate(graph.requests)}
    cell_based = graph.mode is GraphMode.CELL_BASED
    art_vertices = np.flatnonzero(graph.v_kind == V_ARTIFICIAL)
    reb_base = {int(graph.v_ref[v]): int(v)
                for v in np.flatnonzero(graph.v_kind == V_REBALANCE)}
    cap_vertex = {(int(graph.v_ref[v]), int(graph.v_aux[v])): int(v)
                  for v in np.flatnonzero(graph.v_kind == V_CAPACITY)}

    used_artificial: set[int] = set()
    cap_used: dict[int, int] = {}
    paths: list[list[int]] = []
    for vi in range(len(state.vehicles)):
        u = 2 + vi
        path = [DispatchGraph.SOURCE, u]
        truncated = False
        for r in new_by_vehicle[vi]:
            idx = req_idx_by_id.get(r.id)
            nxt_in = None if idx is None else int(graph.req_vertex_in[idx])
            if nxt_in is None or (u, nxt_in) not in arc_exists:
                truncated = True
                break
            path.append(nxt_in)
            if cell_based:
                path.append(int(graph.req_vertex_out[idx]))
                u = int(graph.req_vertex_out[idx])
            else:
                u = nxt_in
        if not truncated:
            nxt = next_future[vi]
            if nxt is not None and nxt.start_time < graph.horizon_end:
                if cell_based:
                    cell = int(grid.cell_of(nxt.origin.x, nxt.origin.y))
                    slot = cap_used.get(cell, 0)
                    reb = reb_base.get(cell)
                    cap = cap_vertex.get((cell, slot))
                    if (reb is not None and cap is not None
                            and (u, reb) in arc_exists):
                        cap_used[cell] = slot + 1
                        path.extend([reb, cap])
                        u = cap
                else:
                    best = None
                    best_key = None
                    for a in art_vertices:
                        a = int(a)
                        if a in used_artificial or (u, a) not in arc_exists:
                            continue
                        r_art = graph.requests[graph.v_ref[a]]
                        d = ((r_art.origin.x - nxt.origin.x) ** 2
                             + (r_art.origin.y - nxt.origin.y) ** 2)
                        key = (d, a)
                        if best_key is None or key < best_key:
                            best_key = key
                            best = a
                    if best is not None:
                        used_artificial.add(best)
                        path.append(best)
                        u = best
        path.append(DispatchGraph.SINK)
        paths.append(path)
    return _paths_to_mask(graph, paths), paths


def build_training_set(days: Sequence[Sequence[Request]], fleet: Sequence[VehicleState],
                       objective: Objective, spec: PolicySpec, tt,
                       dist: RequestDistribution, grid, day_length_s: float,
                       warmup_s: float = 1800.0, cooldown_s: float = 1800.0,
                       extraction_period_s: float = 225.0, period_s: float = 60.0,
                       seed: int = 0, validate: bool = True
                       ) -> list[TrainingInstance]:
    """Imitation instances from per-day request streams.

    Per day: solve the full-information problem over the whole day, replay its
    schedule through the system evolution, and at every extraction time within
    the core window rebuild the policy's per-epoch digraph and restrict the
    full-information solution to it.
    """
    if spec.kind not in (PolicyKind.SAMPLE_BASED, PolicyKind.CELL_BASED):
        raise ValueError("training targets the sample-based or cell-based policy")
    core_end = day_length_s - cooldown_s
    if warmup_s >= core_end:
        raise ValueError("day shorter than warmup + cooldown")
    horizon = int(math.ceil(day_length_s / period_s))
    schema = SB_SCHEMA if spec.kind is PolicyKind.SAMPLE_BASED else CB_SCHEMA
    mode = (DisjointnessMode.VERTEX if spec.kind is PolicyKind.SAMPLE_BASED
            else DisjointnessMode.ARC)
    rt = PolicyRuntime(tt=tt, objective=objective, grid=grid, dist=dist, seed=seed)

    extraction_epochs: list[int] = []
    t_mark = warmup_s
    while t_mark < core_end:
        e = 1 + int(t_mark // period_s)
        if not extraction_epochs or extraction_epochs[-1] != e:
            extraction_epochs.append(e)
        t_mark += extraction_period_s
    wanted = set(extraction_epochs)

    instances: list[TrainingInstance] = []
    for day_idx, day in enumerate(days):
        fi = full_information_bound(day, fleet, objective, tt,
                                    t_max_s=spec.t_max_s, d_max_km=spec.d_max_km,
                                    period_s=period_s)
        batches = group_by_epoch(day, period_s, horizon)
        pointers = {v.vehicle_id: list(fi.trips.get(v.vehicle_id, ())) for v in fleet}
        for state, decision in replay_schedule(fleet, fi.trips, batches, period_s, tt):
            if state.epoch not in wanted:
                continue
            t0 = state.decision_time
            by_vehicle = decision.by_vehicle()
            new_by_vehicle = []
            next_future = []
            for v in state.vehicles:
                vd = by_vehicle[v.vehicle_id]
                new_by_vehicle.append(vd.trip[len(v.pending):])
                upcoming = [r for r in pointers[v.vehicle_id]
                            if r.start_time >= t0 + period_s]
                next_future.append(upcoming[0] if upcoming else None)
            graph = build_policy_graph(
                spec, state, rt, sample_seed=[seed, day_idx, state.epoch])
            y_mask, paths = _restrict_schedule_to_graph(
                graph, state, new_by_vehicle, next_future, spec, grid)
            if validate:
                validate_path_solution(
                    graph, PathSolution(y_mask, tuple(tuple(p) for p in paths), 0.0),
                    mode)
            ctx = FeatureContext(state, grid, objective, dist)
            pred_idx = np.flatnonzero(graph.predictable_mask())
            phi = feature_matrix(graph, ctx, schema, pred_idx)
            instances.append(TrainingInstance(
                graph=graph, pred_idx=pred_idx, phi=phi, y_mask=y_mask,
                solve_mode=mode, meta={"day": day_idx, "epoch": state.epoch}))
    return instances
