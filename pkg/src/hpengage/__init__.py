"""Honeynet engagement planning toolkit.

Solves discounted engagement decision processes over decoy networks, analyzes
the induced continuous-time chain (occupancy, first passage, attraction
efficiency), simulates trajectories, and learns policies model-free.
"""

__version__ = "0.1.0"

from .model import (
    Action,
    NodeKind,
    Policy,
    RegulationError,
    RegulationReport,
    ScenarioError,
    SchemaError,
    SmdpModel,
    StochasticityError,
    Topology,
    TopologyError,
    ValueFunction,
    bundled_scenario_path,
    check_regulation,
    load_scenario,
    load_scenario_path,
    models_equal,
    serialize_scenario,
)
from .solver import (
    BellmanOperands,
    NonConvergenceError,
    SingularSystemError,
    SolveResult,
    bellman_backup,
    build_operands,
    laplace_sojourn,
    policy_evaluation,
    tradeoff_surface,
    value_iteration,
)
from .risk import (
    FptResult,
    Generator,
    LimitingOccupancy,
    OccupancyCurve,
    UnreachableTargetError,
    attraction_efficiency,
    build_generator,
    first_passage,
    limiting_occupancy,
    mfpt,
    mfpt_vector,
    transient_occupancy,
)
from .sweeps import (
    SweepRow,
    sweep_intelligence,
    sweep_persistence,
    with_intelligence,
    with_persistence,
    with_tradeoff,
)
from .sim import (
    EngagementEnv,
    HittingTimeStats,
    RngSeed,
    TrajectoryEvent,
    batch_rollout_utilities,
    discounted_utility,
    estimate_hitting_times,
    horizon_for_tail,
    rollout_discounted_utility,
    simulate_path,
    step,
)
from .learn import (
    LearnConfig,
    LearnResult,
    QTable,
    greedy_policy,
    learning_rate,
    q_learning_replication,
    q_update,
    run_q_learning,
    select_action,
)
