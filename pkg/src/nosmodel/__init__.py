"""Bayesian estimation of population proportions from heterogeneous surveys.

Observations enter on the logit scale with additive errors: sampling error,
source-type error, characteristic error and an optional outlier error under
a regularized horseshoe prior. Errors within one PMA panel series follow an
autoregressive correlation across years.
"""

from ._version import __version__
from .config import ConfigError, RunConfig
from .datamodel import (
    DataModelParams,
    DataModelPriors,
    ErrorStructure,
    NotPositiveDefiniteError,
    build_covariance,
    build_error_structure,
    data_log_density,
    datamodel_log_prior,
    horseshoe_scale,
    predictive_error_samples,
    total_error_sd,
)
from .domain import (
    DomainError,
    IngestionError,
    LatentGrid,
    Observation,
    check_observations,
    delta_logit_variance,
    impute_sampling_variance,
    inv_logit,
    logit,
    transform_observation,
    unmet_ratio,
)
from .estimator import NOSEstimator
from .inference import NOSPosterior, PosteriorDraws, diagnostics, sample, summarize, summarize_indicator
from .preprocess import OutlierClassifier, classify_possible_outliers
from .process import ProcessParams, process_log_prior, register_process_model
from .sim import SimDesign, simulate_dataset

__all__ = [
    "ConfigError",
    "DataModelParams",
    "DataModelPriors",
    "DomainError",
    "ErrorStructure",
    "IngestionError",
    "LatentGrid",
    "NOSEstimator",
    "NOSPosterior",
    "NotPositiveDefiniteError",
    "Observation",
    "OutlierClassifier",
    "PosteriorDraws",
    "ProcessParams",
    "RunConfig",
    "SimDesign",
    "__version__",
    "build_covariance",
    "build_error_structure",
    "check_observations",
    "classify_possible_outliers",
    "data_log_density",
    "datamodel_log_prior",
    "delta_logit_variance",
    "diagnostics",
    "horseshoe_scale",
    "impute_sampling_variance",
    "inv_logit",
    "logit",
    "predictive_error_samples",
    "process_log_prior",
    "register_process_model",
    "sample",
    "simulate_dataset",
    "summarize",
    "summarize_indicator",
    "total_error_sd",
    "transform_observation",
    "unmet_ratio",
]
