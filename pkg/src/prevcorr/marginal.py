"""Minibatch estimates of the model marginal p(y|w) and their gradient path."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .models import ModelSpec, jacobian_log_lik, log_lik_batch


def as_label_dist(p, strict: bool = False, name: str = "distribution") -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or p.size < 2:
        raise ValueError(f"{name} must be a vector over at least 2 labels")
    if not np.all(np.isfinite(p)) or np.any(p < 0):
        raise ValueError(f"{name} has negative or non-finite entries")
    if abs(p.sum() - 1.0) > 1e-9:
        raise ValueError(f"{name} sums to {p.sum()!r}, not 1")
    if strict and np.any(p <= 0):
        raise ValueError(f"{name} must be strictly positive, got {p.tolist()}")
    return p


@dataclass(frozen=True)
class WeightPolicy:
    """Corrective weight policy.

    ``expected`` uses p_Y/p~ with p~ the design label distribution,
    ``empirical`` uses n_B/n_B(y) * p_Y. ``fallback='expected'`` lets an
    empirical policy fall back to the expected one when a class is missing.
    """
    kind: str = "empirical"
    expected_dist: tuple | None = None
    fallback: str = "error"

    def __post_init__(self):
        if self.kind not in ("expected", "empirical"):
            raise ValueError(f"unknown weight policy {self.kind!r}")
        if self.fallback not in ("error", "expected"):
            raise ValueError(f"unknown fallback {self.fallback!r}")
        if self.kind == "expected" and self.expected_dist is None:
            raise ValueError("expected policy needs expected_dist")


def beta_weights(policy: WeightPolicy, p_Y, labels) -> np.ndarray:
    """Per-sample weights beta(y_n) pulling minibatch averages onto the target p_Y."""
    p_Y = as_label_dist(p_Y, name="target prevalence")
    labels = np.asarray(labels, dtype=int)
    K = p_Y.size
    if labels.size and (labels.min() < 0 or labels.max() >= K):
        raise ValueError("label out of range")
    kind = policy.kind
    counts = np.bincount(labels, minlength=K)
    if kind == "empirical" and np.any(counts == 0):
        missing = int(np.flatnonzero(counts == 0)[0])
        if policy.fallback == "expected" and policy.expected_dist is not None:
            kind = "expected"
        else:
            raise ValueError(f"empirical weight policy: label {missing} is absent from the minibatch")
    if kind == "expected":
        pt = np.asarray(policy.expected_dist, dtype=float)
        if pt.shape != p_Y.shape:
            raise ValueError("expected_dist has the wrong number of labels")
        if np.any(pt <= 0):
            raise ValueError(f"expected_dist has a zero entry: {pt.tolist()}")
        per_label = p_Y / pt
    else:
        per_label = labels.size / counts * p_Y
    return per_label[labels]


@dataclass
class MarginalEstimate:
    log_phat: np.ndarray   # log p_B(y; w), shape (K,)
    weights: np.ndarray    # beta(y_n), shape (n,)
    gamma: np.ndarray      # log(beta(y_n) / n_B), shape (n,)


def _logsumexp_rows(A):
    # logsumexp over axis 0 of an (n, K) array
    m = A.max(axis=0)
    m = np.where(np.isfinite(m), m, 0.0)
    return m + np.log(np.exp(A - m).sum(axis=0))


def marginal_estimate(loglik, labels, weights) -> MarginalEstimate:
    """log p_B(y') = logsumexp_n(log(beta_n/n_B) + loglik[n, y'])."""
    loglik = np.asarray(loglik, dtype=float)
    weights = np.asarray(weights, dtype=float)
    labels = np.asarray(labels)
    n = loglik.shape[0]
    if n < 1 or labels.shape[0] != n or weights.shape[0] != n:
        raise ValueError("loglik, labels and weights must share a non-empty first dimension")
    if not (np.all(np.isfinite(loglik)) and np.all(np.isfinite(weights))):
        raise ValueError("non-finite log-likelihoods or weights")
    with np.errstate(divide="ignore"):
        gamma = np.log(weights / n)
    return MarginalEstimate(_logsumexp_rows(gamma[:, None] + loglik), weights, gamma)


def marginal_vjp(loglik, est: MarginalEstimate, g) -> np.ndarray:
    """Gradient of sum_y g[y] * log p_B(y) with respect to the log-likelihood matrix."""
    A = est.gamma[:, None] + np.asarray(loglik, dtype=float)
    soft = np.exp(A - est.log_phat[None, :])
    return soft * np.asarray(g, dtype=float)[None, :]


def log_marginal_grad_scale(est: MarginalEstimate, log_q_psi) -> np.ndarray:
    return np.exp(est.log_phat - np.asarray(log_q_psi, dtype=float))


def log_marginal_backward(loglik, est: MarginalEstimate, log_q_psi, g, full_batch: bool = False):
    """Route an incoming gradient g on log p(y|w) into the log-likelihood matrix.

    The forward value used for log p(y|w) is log q_psi; the backward pass
    multiplies g by exp(log p_B - log q_psi) and differentiates log p_B.
    In full-batch mode the scale is 1 (log p_B is used directly).
    """
    g = np.asarray(g, dtype=float)
    if not full_batch:
        g = g * log_marginal_grad_scale(est, log_q_psi)
    return marginal_vjp(loglik, est, g)


@dataclass(frozen=True)
class FinitePopulation:
    """Covariate law with finite support: points (m, d) and probabilities (m,)."""
    support: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        s = np.atleast_2d(np.asarray(self.support, dtype=float))
        p = np.asarray(self.probs, dtype=float)
        if s.shape[0] != p.shape[0]:
            raise ValueError("support and probs lengths differ")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
            raise ValueError(f"population weights must be non-negative and sum to 1 (sum={p.sum()!r})")
        object.__setattr__(self, "support", s)
        object.__setattr__(self, "probs", p)


def population_from_labelled(X, y, p_Y) -> FinitePopulation:
    """p_X implied by re-weighting labelled data to prevalence p_Y.

    Each sample of class y gets mass p_Y(y)/N_y; duplicate rows are merged.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=int)
    p_Y = as_label_dist(p_Y)
    counts = np.bincount(y, minlength=p_Y.size)
    if np.any(counts[p_Y > 0] == 0):
        raise ValueError("a label with positive prevalence has no samples")
    with np.errstate(divide="ignore", invalid="ignore"):
        mass = np.where(counts > 0, p_Y / np.maximum(counts, 1), 0.0)[y]
    uniq, inv = np.unique(X, axis=0, return_inverse=True)
    probs = np.bincount(inv.ravel(), weights=mass, minlength=uniq.shape[0])
    return FinitePopulation(uniq, probs / probs.sum())


def exact_marginal(spec: ModelSpec, w, population: FinitePopulation) -> np.ndarray:
    """p(y|w) = sum_x p(y|x, w) p_X(x)."""
    if not isinstance(population, FinitePopulation):
        population = FinitePopulation(*population)
    P = np.exp(log_lik_batch(spec, w, population.support))
    return population.probs @ P


def exact_marginal_jacobian(spec: ModelSpec, w, population: FinitePopulation) -> np.ndarray:
    """d p(y|w) / d w, shape (|Y|, P)."""
    P = np.exp(log_lik_batch(spec, w, population.support))
    J = jacobian_log_lik(spec, w, population.support)
    return np.einsum("m,mk,mkp->kp", population.probs, P, J)
