"""Deep bootstrap for nonparametric regression with conditional diffusion models."""

__version__ = "0.1.0"

from .benchmark import (ExperimentConfig, MetricsReport, SyntheticTarget, compute_metrics,
                        eval_f0, generate_dataset, make_target, run_experiment)
from .bootstrap import (BootstrapConfig, BootstrapResult, confidence_interval, empirical_cdf,
                        estimate_fhat, make_bootstrap_dataset, quantile, run_bootstrap)
from .data import RegressionDataset
from .diffusion import (DiffusionSchedule, SamplerConfig, StandardizationState, TrainConfig,
                        build_schedule, dsm_loss_stochastic_batch, dsm_loss_strict, ei_sample,
                        forward_perturb, train_score)
from .mlp import AdamState, MlpScoreNet, adam_step, backward, forward, init_net

__all__ = [
    "ExperimentConfig", "MetricsReport", "SyntheticTarget", "compute_metrics", "eval_f0",
    "generate_dataset", "make_target", "run_experiment",
    "BootstrapConfig", "BootstrapResult", "confidence_interval", "empirical_cdf", "estimate_fhat",
    "make_bootstrap_dataset", "quantile", "run_bootstrap",
    "RegressionDataset",
    "DiffusionSchedule", "SamplerConfig", "StandardizationState", "TrainConfig", "build_schedule",
    "dsm_loss_stochastic_batch", "dsm_loss_strict", "ei_sample", "forward_perturb", "train_score",
    "AdamState", "MlpScoreNet", "adam_step", "backward", "forward", "init_net",
]
