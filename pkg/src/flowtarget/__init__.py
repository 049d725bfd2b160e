"""Throughput-constrained online resource allocation.

Online assignment of arrivals to resources under cumulative average-
consumption targets with convex deviation penalties: proxy-assignment dual
gradient descent and its baselines, exact and certified offline benchmarks,
synthetic and Gumbel-model instance generation with an aggregate-count
estimator, and a seeded Monte-Carlo experiment harness.
"""

from .core import (
    ArrivalSequence,
    ConsumptionState,
    DeviationCost,
    Instance,
    replay_decisions,
    total_cost,
    uniform_dev_costs,
)
from .harness import ExperimentConfig, mean_abs_target_deviation, regret_scaling_report, run_experiment
from .instances import (
    AggregateObservation,
    GumbelCostModel,
    NonstatProfile,
    SyntheticParams,
    estimate_gumbel_mle,
    generate_synthetic,
    ideal_quantities,
    nonstationary_transform,
    sample_arrivals,
    sample_gumbel_arrivals,
)
from .oracle import (
    OfflineSolution,
    brute_force_offline,
    cumulative_proxy_cost,
    hindsight_optimum,
    myopic_offline,
    proxy_offline,
)
from .policies import (
    POLICIES,
    PolicyConfig,
    RunResult,
    idealized_consumption,
    ogd_update,
    proxy_assign,
    run_greedy,
    run_myopic,
    run_naive_primal_dual,
    run_proxy_dual_gd,
    run_single_epoch_dgd,
)
from .solver import solve_box_convex

__version__ = "0.1.0"

__all__ = [
    "AggregateObservation",
    "ArrivalSequence",
    "ConsumptionState",
    "DeviationCost",
    "ExperimentConfig",
    "GumbelCostModel",
    "Instance",
    "NonstatProfile",
    "OfflineSolution",
    "POLICIES",
    "PolicyConfig",
    "RunResult",
    "SyntheticParams",
    "brute_force_offline",
    "cumulative_proxy_cost",
    "estimate_gumbel_mle",
    "generate_synthetic",
    "hindsight_optimum",
    "ideal_quantities",
    "idealized_consumption",
    "mean_abs_target_deviation",
    "myopic_offline",
    "nonstationary_transform",
    "ogd_update",
    "proxy_assign",
    "proxy_offline",
    "regret_scaling_report",
    "replay_decisions",
    "run_experiment",
    "run_greedy",
    "run_myopic",
    "run_naive_primal_dual",
    "run_proxy_dual_gd",
    "run_single_epoch_dgd",
    "sample_arrivals",
    "sample_gumbel_arrivals",
    "solve_box_convex",
    "total_cost",
    "uniform_dev_costs",
]
