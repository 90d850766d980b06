"""Prevalence-bias-corrected training, prediction and evaluation for probabilistic classifiers."""
from .models import LabelSpace, ModelSpec, grad_log_lik, log_lik, log_lik_batch, param_count
from .marginal import (FinitePopulation, MarginalEstimate, WeightPolicy, beta_weights, exact_marginal,
                       log_marginal_grad_scale, marginal_estimate)
from .auxiliary import AuxParams, AuxSpec, aux_forward, aux_kl_loss, aux_step
from .losses import ig_loss, iw_loss, nll_loss, prevalence_prior_loss
from .optim import AdamState, adam_step
from .training import LossKind, MinibatchPolicy, TrainConfig, train
from .data import Dataset

__all__ = [
    "LabelSpace", "ModelSpec", "grad_log_lik", "log_lik", "log_lik_batch", "param_count",
    "FinitePopulation", "MarginalEstimate", "WeightPolicy", "beta_weights", "exact_marginal",
    "log_marginal_grad_scale", "marginal_estimate", "AuxParams", "AuxSpec", "aux_forward",
    "aux_kl_loss", "aux_step", "ig_loss", "iw_loss", "nll_loss", "prevalence_prior_loss",
    "AdamState", "adam_step", "LossKind", "MinibatchPolicy", "TrainConfig", "train", "Dataset",
]
