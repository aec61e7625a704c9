"""Simulator and analysis toolkit for an optical link read out by
light-gated ion-channel receptors."""

__version__ = "0.1.0"

from .analysis import (
    ExperimentConfig,
    MonteCarloResult,
    SweepRow,
    calibrate_dark_posterior,
    data_rate,
    exact_error_probability,
    exact_error_probability_marginal,
    monte_carlo_error,
    sweep,
)
from .detector import (
    DetectorConfig,
    PosteriorResult,
    emission,
    likelihood,
    posterior,
    posterior_table,
)
from .ensemble import (
    CombinationState,
    EnsembleModel,
    build_combined_matrix,
    enumerate_combinations,
    initial_distribution,
    sample_trajectory,
)
from .kinetics import (
    RateMatrix,
    RateParams,
    ReceptorState,
    TransitionMatrix,
    build_rate_matrix,
    discretize_euler,
    discretize_exact,
    steady_state,
)
from .photon_noise import PhotonModel, lambda_of_snr, sample_intensity, snr_of_lambda

__all__ = [
    "CombinationState",
    "DetectorConfig",
    "EnsembleModel",
    "ExperimentConfig",
    "MonteCarloResult",
    "PhotonModel",
    "PosteriorResult",
    "RateMatrix",
    "RateParams",
    "ReceptorState",
    "SweepRow",
    "TransitionMatrix",
    "build_combined_matrix",
    "build_rate_matrix",
    "calibrate_dark_posterior",
    "data_rate",
    "discretize_euler",
    "discretize_exact",
    "emission",
    "enumerate_combinations",
    "exact_error_probability",
    "exact_error_probability_marginal",
    "initial_distribution",
    "lambda_of_snr",
    "likelihood",
    "monte_carlo_error",
    "posterior",
    "posterior_table",
    "sample_intensity",
    "sample_trajectory",
    "snr_of_lambda",
    "steady_state",
    "sweep",
]
