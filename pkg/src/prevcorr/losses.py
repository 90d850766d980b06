"""Loss functions on log-likelihood matrices.

Every loss returns ``(value, G)`` where ``G`` is the gradient of the value with
respect to the (n, K) log-likelihood matrix; model gradients follow from
``models.vjp_log_lik``. Data terms are scaled by N/n_B so that a minibatch value
estimates the full-dataset loss.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .marginal import MarginalEstimate, log_marginal_backward
from .optim import AdamState, adam_step  # noqa: F401  (re-exported)


def _pick(loglik, labels):
    labels = np.asarray(labels, dtype=int)
    return labels, loglik[np.arange(labels.size), labels]


def _scale(n_B, N):
    return 1.0 if N is None else N / n_B


def weighted_nll(loglik, labels, weights, N=None):
    loglik = np.asarray(loglik, dtype=float)
    weights = np.asarray(weights, dtype=float)
    labels, f = _pick(loglik, labels)
    c = _scale(labels.size, N)
    G = np.zeros_like(loglik)
    G[np.arange(labels.size), labels] = -c * weights
    return float(-c * np.dot(weights, f)), G


def nll_loss(loglik, labels, omega, N=None):
    """(N/n_B) sum_n omega_n * (-loglik[n, y_n])."""
    return weighted_nll(loglik, labels, omega, N)


def iw_loss(loglik, labels, beta, N=None):
    """Importance-weighted NLL, -(N/n_B) sum_n beta_n loglik[n, y_n]."""
    return weighted_nll(loglik, labels, beta, N)


def marginal_coefficients(labels, omega, n_labels: int, N=None) -> np.ndarray:
    """Estimated label counts N_F(y) multiplying log p(y|w) in the IG loss."""
    labels = np.asarray(labels, dtype=int)
    c = _scale(labels.size, N)
    return c * np.bincount(labels, weights=np.asarray(omega, dtype=float), minlength=n_labels)


def ig_loss(loglik, labels, est: MarginalEstimate, log_q_psi, omega, N=None,
            full_batch: bool = False, extra_marginal_grad=None):
    """Negative information gain, sum_n [log p(y_n|w) - log p(y_n|x_n, w)].

    The value uses log q_psi for log p(y|w) (log p_B in full-batch mode). The
    gradient on each log-marginal is the estimated label count, rescaled by
    exp(log p_B - log q_psi) and pushed through log p_B. ``extra_marginal_grad``
    adds further gradient on log p(y|w), e.g. from the prevalence prior.
    """
    loglik = np.asarray(loglik, dtype=float)
    if full_batch:
        log_q_psi = est.log_phat
    elif log_q_psi is None:
        raise ValueError("ig loss needs the auxiliary model output log q_psi outside full-batch mode")
    log_q_psi = np.asarray(log_q_psi, dtype=float)
    K = loglik.shape[1]
    coef = marginal_coefficients(labels, omega, K, N)
    value, G = weighted_nll(loglik, labels, omega, N)
    value += float(np.dot(coef, log_q_psi))
    g = coef if extra_marginal_grad is None else coef + np.asarray(extra_marginal_grad, dtype=float)
    G += log_marginal_backward(loglik, est, log_q_psi, g, full_batch=full_batch)
    return value, G


def prevalence_prior_loss(marginal_log, p_hat_Y, N_pr: float):
    """-N_pr sum_y p_hat_Y(y) log p(y|w); returns (value, gradient on marginal_log)."""
    if N_pr < 0:
        raise ValueError("N_pr must be >= 0")
    p_hat_Y = np.asarray(p_hat_Y, dtype=float)
    if N_pr == 0:
        return 0.0, np.zeros_like(p_hat_Y)
    marginal_log = np.asarray(marginal_log, dtype=float)
    return float(-N_pr * np.dot(p_hat_Y, marginal_log)), -N_pr * p_hat_Y


@dataclass(frozen=True)
class PriorSpec:
    """Parameter prior, negative log-density up to a constant.

    gaussian:  (strength/2) ||w||^2
    student-t: sum (nu+1)/2 log(1 + w^2/(nu scale^2))
    """
    kind: str = "gaussian"
    strength: float = 1e-3
    nu: float = 1.0
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("none", "gaussian", "student-t"):
            raise ValueError(f"unknown prior kind {self.kind!r}")
        if self.strength < 0 or self.nu <= 0 or self.scale <= 0:
            raise ValueError("prior parameters out of range")

    def to_dict(self):
        return {"kind": self.kind, "strength": self.strength, "nu": self.nu, "scale": self.scale}


def prior_loss(prior: PriorSpec, w):
    w = np.asarray(w, dtype=float)
    if prior.kind == "none":
        return 0.0, np.zeros_like(w)
    if prior.kind == "gaussian":
        return float(0.5 * prior.strength * np.dot(w, w)), prior.strength * w
    s2 = prior.nu * prior.scale ** 2
    value = 0.5 * (prior.nu + 1.0) * np.log1p(w * w / s2).sum()
    return float(value), (prior.nu + 1.0) * w / (s2 + w * w)
