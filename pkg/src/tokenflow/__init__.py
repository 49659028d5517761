"""Decentralized threshold routing of memoryless tokens.

Tokens injected at source nodes of a weighted directed network move one arc
at a time, crossing an arc only when the token count at its tail exceeds the
count at its head by more than the arc cost.  In the long run every new token
leaves through a closest sink along a shortest (optionally budget-constrained)
path.  This package simulates those dynamics and checks them against exact
shortest-path oracles.
"""

from tokenflow.graph import (
    Arc,
    Modification,
    Network,
    NetworkError,
    Path,
    ValidationReport,
    apply_modification,
    incidence_matrix,
    is_admissible,
    make_path,
    rational_network,
    scale_rational_costs,
    total_tokens,
    validate_assumptions,
    zero_state,
)
from tokenflow.policy import (
    ChoiceModel,
    StepResult,
    TokenOutcome,
    WalkLimitError,
    inject,
    is_global_rest,
    permitted_moves,
    run_token,
    run_token_enhanced,
    settle,
)
from tokenflow.constrained import (
    BucketedState,
    ExpandedNetwork,
    constrained_inject,
    constrained_inject_enhanced,
    constrained_settle,
    expand,
    lift_state,
    project_state,
)
from tokenflow.oracle import (
    DistanceMap,
    NonPositiveCircuitError,
    constrained_shortest,
    detect_nonpositive_circuit,
    shortest_to_sinks,
    sink_pair_paths_nonnegative,
)
from tokenflow.simulator import MetricsLog, SimConfig, run, run_dynamic, summarize
from tokenflow.generators import AltitudeMap, fig2_network, grid_from_altitude, small_world
from tokenflow.io import load_network, save_network

__version__ = "0.1.0"

__all__ = [
    "AltitudeMap",
    "Arc",
    "BucketedState",
    "ChoiceModel",
    "DistanceMap",
    "ExpandedNetwork",
    "MetricsLog",
    "Modification",
    "Network",
    "NetworkError",
    "NonPositiveCircuitError",
    "Path",
    "SimConfig",
    "StepResult",
    "TokenOutcome",
    "ValidationReport",
    "WalkLimitError",
    "apply_modification",
    "constrained_inject",
    "constrained_inject_enhanced",
    "constrained_settle",
    "constrained_shortest",
    "detect_nonpositive_circuit",
    "expand",
    "fig2_network",
    "grid_from_altitude",
    "incidence_matrix",
    "inject",
    "is_admissible",
    "is_global_rest",
    "lift_state",
    "load_network",
    "make_path",
    "permitted_moves",
    "project_state",
    "rational_network",
    "run",
    "run_dynamic",
    "run_token",
    "run_token_enhanced",
    "save_network",
    "scale_rational_costs",
    "settle",
    "shortest_to_sinks",
    "sink_pair_paths_nonnegative",
    "small_world",
    "summarize",
    "total_tokens",
    "validate_assumptions",
    "zero_state",
]
