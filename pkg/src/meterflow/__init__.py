"""Block-level parking occupancy and parameter estimation from meter payments.

The pipeline: queue sample paths (queue_core) + payment behavior
(payment_model) form the hidden state (state_model); a kernel-weighted
particle filter (abc_filter) scores parameter values against observed
payment records; a Metropolis-Hastings chain (pmmh_sampler) explores the
parameter posterior; estimators turns either output into occupancy bands,
cruising statistics, and error metrics; data_io and cli handle files.
"""

from .abc_filter import (
    AbcConfig,
    FilterDegeneracyError,
    FilterResult,
    Observation,
    TrajectorySet,
    abc_log_weight,
    effective_sample_size,
    kernel_bandwidths,
    resample_multinomial,
    run_filter,
    simulate_pseudo_observations,
)
from .data_io import (
    PaymentRecord,
    RateSchedule,
    Scenario,
    generate_scenario,
    parse_ground_truth,
    parse_payments,
    payments_to_observations,
    simulate_scenario,
)
from .estimators import (
    GroundTruth,
    OccupancyTrajectory,
    band_coverage,
    cruising_stats,
    evaluation_report,
    hourly_occupancy_rate,
    parameter_posterior_summary,
    rmse_vs_truth,
    trajectory_quantiles,
    weighted_quantile,
)
from .payment_model import (
    MeterState,
    PaymentMixture,
    log_payment_density,
    sample_payment_amount,
    update_meter,
)
from .pmmh_sampler import (
    BetaPrior,
    FixedValue,
    LogNormalPrior,
    PmmhConfig,
    PosteriorSample,
    PriorSpec,
    ZeroAcceptanceError,
    acceptance_log_ratio,
    map_estimate,
    moment_init,
    pooled_trajectories,
    propose_params,
    run_pmmh,
)
from .queue_core import (
    Exponential,
    QueuePrimitives,
    SamplePath,
    build_sample_path,
    extend_sample_path,
    invert_sample_path,
    log_joint_density,
    occupancy_at,
    occupancy_profile,
    searching_at,
)
from .state_model import (
    ModelParams,
    Particle,
    init_particle,
    log_transition_density,
    sample_arrival_increment,
    transition,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # queue_core
    "Exponential",
    "QueuePrimitives",
    "SamplePath",
    "build_sample_path",
    "extend_sample_path",
    "invert_sample_path",
    "log_joint_density",
    "occupancy_at",
    "occupancy_profile",
    "searching_at",
    # payment_model
    "MeterState",
    "PaymentMixture",
    "update_meter",
    "sample_payment_amount",
    "log_payment_density",
    # state_model
    "ModelParams",
    "Particle",
    "init_particle",
    "sample_arrival_increment",
    "transition",
    "log_transition_density",
    # abc_filter
    "Observation",
    "AbcConfig",
    "TrajectorySet",
    "FilterResult",
    "FilterDegeneracyError",
    "simulate_pseudo_observations",
    "abc_log_weight",
    "effective_sample_size",
    "resample_multinomial",
    "kernel_bandwidths",
    "run_filter",
    # pmmh_sampler
    "LogNormalPrior",
    "BetaPrior",
    "FixedValue",
    "PriorSpec",
    "PmmhConfig",
    "PosteriorSample",
    "ZeroAcceptanceError",
    "propose_params",
    "acceptance_log_ratio",
    "run_pmmh",
    "map_estimate",
    "moment_init",
    "pooled_trajectories",
    # estimators
    "OccupancyTrajectory",
    "GroundTruth",
    "weighted_quantile",
    "trajectory_quantiles",
    "rmse_vs_truth",
    "band_coverage",
    "cruising_stats",
    "hourly_occupancy_rate",
    "parameter_posterior_summary",
    "evaluation_report",
    # data_io
    "PaymentRecord",
    "RateSchedule",
    "Scenario",
    "parse_payments",
    "payments_to_observations",
    "parse_ground_truth",
    "generate_scenario",
    "simulate_scenario",
]
