"""Solver and simulator for risk-sensitive multi-class single-server
scheduling in the moderate-deviation heavy-traffic regime."""

from .paths import (
    GridPath,
    ModelParams,
    TimeGrid,
    oscillation,
    path_from_function,
    path_from_slopes,
    path_from_values,
    rate_function,
    sup_norm,
    time_change_rho,
    zero_path,
)
from .skorokhod import ReflectionResult, lipschitz_check, minimality_check, reflect
from .game import (
    CostSpec,
    DpOptions,
    GameInstance,
    OracleResult,
    ReducedInstance,
    SolveOptions,
    SolveResult,
    StrategyOutput,
    builtin_cost,
    cost_from_config,
    dp_oracle,
    linear_cost,
    payoff,
    property_bounds,
    reduce_to_workload,
    respond,
    solve_value,
    workload_variance,
)
from .queue_sim import (
    PolicySpec,
    PrimitiveDistributions,
    PrimitiveStreams,
    ScalingScheme,
    SimTrace,
    ScaledTrace,
    cmu_policy,
    replication_rng,
    run,
    sample_primitives,
    scale_trace,
    scaling_sequence,
    static_rho_policy,
    tracking_policy,
    workload_identity_residual,
    zero_policy,
)
from .estimator import (
    ConvergenceReport,
    RiskSensitiveEstimate,
    TailDecayResult,
    convergence_suite,
    estimate_J,
    estimate_tail_decay,
    horizon_cost,
    log_mean_exp,
)

__version__ = "0.1.0"
