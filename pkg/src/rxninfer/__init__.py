"""Bayesian inference of chemical reaction network structure with
topology-aware reversible-jump MCMC."""

__version__ = "0.1.0"

from .bayes import Dataset, Posterior, log_likelihood, log_posterior, log_prior
from .io import load_network, read_dataset_csv, write_dataset_csv
from .kinetics import ForwardModel, IntegrationError, IntegratorConfig, RateParameters, integrate
from .network import (
    EffectiveNetworkKey,
    ModelIndicator,
    ReactionNetwork,
    effective_network,
    enumerate_clusters,
    pathway_class,
)
from .postprocess import build_report, derandomized_model_probs, raw_model_probs
from .sampler import SamplerConfig, Trace, Variant, run_chain
from .estimator import NetworkStructureSampler

__all__ = [
    "Dataset",
    "EffectiveNetworkKey",
    "ForwardModel",
    "IntegrationError",
    "IntegratorConfig",
    "ModelIndicator",
    "NetworkStructureSampler",
    "Posterior",
    "RateParameters",
    "ReactionNetwork",
    "SamplerConfig",
    "Trace",
    "Variant",
    "build_report",
    "derandomized_model_probs",
    "effective_network",
    "enumerate_clusters",
    "integrate",
    "load_network",
    "log_likelihood",
    "log_posterior",
    "log_prior",
    "pathway_class",
    "raw_model_probs",
    "read_dataset_csv",
    "run_chain",
    "write_dataset_csv",
]
