"""Distributed solution of linear equations over random networks.

Agents each hold a block of rows of ``Ax = b`` and run a random
Krasnoselskii-Mann iteration that mixes neighbour averaging with a local
relaxed projection step.  The package contains the problem model, graph
universes and switching processes, the operators of the iteration, the
iteration engine, an independent limit-point oracle, a command line runner
and a scikit-learn style estimator wrapper.
"""

from randkm.errors import (
    ConfigError,
    DegenerateBlockError,
    InfeasibleError,
    NumericalDivergenceError,
    RandKMError,
    StepSizeError,
    UnmodeledActivationError,
)
from randkm.problem import (
    PartitionedSystem,
    TildeSystem,
    build_tilde,
    consensus_error,
    default_thetas,
    row_sum_thetas,
    residual,
)
from randkm.graphs import (
    GraphUniverse,
    WeightedGraph,
    lift,
    validate_doubly_stochastic,
    validate_union_connectivity,
)
from randkm.process import (
    CyclicProcess,
    GossipProcess,
    IIDProcess,
    MarkovProcess,
    check_recurrence,
    next_graph,
)
from randkm.operators import OperatorBundle
from randkm.engine import (
    RunConfig,
    RunRecord,
    estimate_decay_rate,
    km_step,
    monte_carlo,
    run_trajectory,
)
from randkm.oracle import build_constraints, project_affine, verify_limit
from randkm.estimator import DistributedKMSolver

__all__ = [
    "ConfigError",
    "CyclicProcess",
    "DegenerateBlockError",
    "DistributedKMSolver",
    "GossipProcess",
    "GraphUniverse",
    "IIDProcess",
    "InfeasibleError",
    "MarkovProcess",
    "NumericalDivergenceError",
    "OperatorBundle",
    "PartitionedSystem",
    "RandKMError",
    "RunConfig",
    "RunRecord",
    "StepSizeError",
    "TildeSystem",
    "UnmodeledActivationError",
    "WeightedGraph",
    "build_constraints",
    "build_tilde",
    "check_recurrence",
    "consensus_error",
    "default_thetas",
    "estimate_decay_rate",
    "km_step",
    "lift",
    "monte_carlo",
    "next_graph",
    "project_affine",
    "row_sum_thetas",
    "residual",
    "run_trajectory",
    "validate_doubly_stochastic",
    "validate_union_connectivity",
    "verify_limit",
]

__version__ = "0.1.0"
