"""Byzantine-resilient decentralized TD(lambda): simulate and verify.

A desk-scale laboratory for multi-agent policy evaluation over directed
networks where some agents lie: exact fixed-point oracles for TD with
eligibility traces, trimmed-mean aggregation with verifiable mixing
matrices, attack models, a batched synchronous simulator, and an
exhaustive worst-case connectivity check.
"""
from .aggregation import (
    ConditionsReport,
    InboxSnapshot,
    TrimWitness,
    WeightRow,
    assemble_matrix,
    mean_aggregate,
    reconstruct_weight_matrix,
    sanitize_values,
    trimmed_aggregate,
    verify_conditions,
)
from .attacks import ATTACK_KINDS, AttackModel, byzantine_message
from .config import ExperimentConfig, ScheduleSpec, TopologySpec, parse_config, parse_config_text
from .environments import (
    GridNavSpec,
    RandomMrpSpec,
    build_grid_navigation,
    build_random_mrp,
)
from .errors import (
    BracketingFailed,
    BudgetExceeded,
    ByztdError,
    ConfigError,
    InvalidSpec,
    InvalidTrim,
    NoHonestAgents,
    NonFiniteParameter,
    NotErgodic,
    NotNegativeDefinite,
    SingularSystem,
    TooFewNeighbors,
    TooShort,
    UnknownAgent,
    UnknownPreset,
)
from .metrics import (
    MetricsTrace,
    consensus_error,
    consensus_rate_diagnostic,
    degree_of_unsaturation,
    fixed_point_distance,
    load_trace_csv,
    measured_reward_variation,
    save_trace_csv,
    squared_bellman_error,
)
from .mrp import (
    MrpModel,
    StationaryDistribution,
    approximation_objective,
    exact_value_function,
    global_reward_vector,
    load_model,
    restrict_agents,
    save_model,
    stationary_distribution,
    weighted_projection,
)
from .runner import (
    ExperimentResult,
    Simulation,
    SimulationState,
    average_traces,
    build_environment,
    build_trial_simulation,
    run_experiment,
)
from .td import (
    EligibilityTrace,
    SteadyState,
    TdParams,
    centralized_td_step,
    local_increment,
    make_schedule,
    sandwich_check,
    steady_state,
    trace_update,
)
from .topology import (
    ConnectivityReport,
    NetworkTopology,
    build_complete,
    build_erdos_renyi,
    build_preset,
    check_worst_case_connectivity,
    in_neighbors,
    load_topology,
    save_topology,
)

__version__ = "0.1.0"
