"""Moreau-Yosida importance sampling for nonsmooth log-concave targets."""

__version__ = "0.1.0"

from .envelope import EnvelopeView, ProxError, TargetModel, envelope_grad, envelope_value, log_weight
from .estimators import (
    EstimateReport,
    WeightedSample,
    acf,
    batch_means_cov,
    kong_ess,
    mcmc_ess,
    plugin_xi,
    relative_efficiency,
    snis_estimate,
    weighted_cdf,
    weighted_quantile,
)
from .samplers import ChainTrace, SamplerConfig, run_chain
from .tuning import TuneResult, gaussian_lambda_star, tune_lambda, tune_step

__all__ = [
    "ChainTrace",
    "EnvelopeView",
    "EstimateReport",
    "ProxError",
    "SamplerConfig",
    "TargetModel",
    "TuneResult",
    "WeightedSample",
    "acf",
    "batch_means_cov",
    "envelope_grad",
    "envelope_value",
    "gaussian_lambda_star",
    "kong_ess",
    "log_weight",
    "mcmc_ess",
    "plugin_xi",
    "relative_efficiency",
    "run_chain",
    "snis_estimate",
    "tune_lambda",
    "tune_step",
    "weighted_cdf",
    "weighted_quantile",
]
