"""Fleet control for autonomous mobility-on-demand.

Dispatching and rebalancing decisions are computed by solving an exact
k-disjoint-shortest-path problem on a per-epoch digraph whose arc weights are
either rule-based (greedy, sampling, full-information) or predicted by a
linear model trained to imitate full-information solutions.
"""

__version__ = "0.1.0"

from .model import (  # noqa: F401
    FleetDecision,
    Location,
    Objective,
    ObjectiveMode,
    Request,
    SystemState,
    VehicleDecision,
    VehicleState,
    advance,
    trip_reward,
    validate_decision,
)
from .traveltime import TravelTimeProvider  # noqa: F401
from .demand import (  # noqa: F401
    RebalancingGrid,
    RequestDistribution,
    calibrate_distribution,
    sample_artificial_requests,
)
from .digraph import DispatchGraph, GraphMode, GraphParams, build_graph, sparsify  # noqa: F401
from .kdspp import DisjointnessMode, PathSolution, brute_force_oracle, solve  # noqa: F401
