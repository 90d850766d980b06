"""Test-time prediction rules and decisions."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .marginal import as_label_dist

# Bernoulli-number coefficients of the asymptotic digamma series
_B = (1.0 / 12, -1.0 / 120, 1.0 / 252, -1.0 / 240, 1.0 / 132, -691.0 / 32760, 1.0 / 12)


def digamma(x):
    """psi(x) for x > 0 via upward recurrence to x >= 10 and the asymptotic series."""
    x = np.asarray(x, dtype=float)
    if np.any(~(x > 0)):
        raise ValueError("digamma is only implemented for positive arguments")
    acc = np.zeros_like(x)
    z = x.copy()
    small = z < 10.0
    while np.any(small):
        acc = acc - np.where(small, 1.0 / z, 0.0)
        z = np.where(small, z + 1.0, z)
        small = z < 10.0
    inv2 = 1.0 / (z * z)
    series = np.zeros_like(z)
    p = inv2.copy()
    for c in _B:
        series = series + c * p
        p = p * inv2
    return acc + np.log(z) - 0.5 / z - series


def _normalize_log(A):
    A = A - A.max(axis=-1, keepdims=True)
    Q = np.exp(A)
    return Q / Q.sum(axis=-1, keepdims=True)


def predict_population(loglik) -> np.ndarray:
    """Bias-free rule q = p(y|x, w)."""
    loglik = np.asarray(loglik, dtype=float)
    return _normalize_log(loglik)


def predict_selection_known(loglik, log_marginal, p_tilde) -> np.ndarray:
    """q(y) proportional to p(y|x, w) / p(y|w) * p~*(y)."""
    p_tilde = as_label_dist(p_tilde, strict=True, name="test prevalence")
    log_marginal = np.asarray(log_marginal, dtype=float)
    if not np.all(np.isfinite(log_marginal)):
        raise ValueError("marginals must be strictly positive")
    A = np.asarray(loglik, dtype=float) - log_marginal + np.log(p_tilde)
    if np.any(np.all(np.isneginf(A), axis=-1)):
        raise ValueError("zero normalizer in selection rule")
    return _normalize_log(A)


@dataclass
class DirichletState:
    alpha: np.ndarray
    q: np.ndarray
    converged: bool = False
    n_iter: int = 0
    elbo: list = field(default_factory=list)

    def mean(self) -> np.ndarray:
        return self.alpha / self.alpha.sum()

    def to_dict(self) -> dict:
        return {"alpha": self.alpha.tolist(), "mean": self.mean().tolist(), "converged": self.converged,
                "n_iter": self.n_iter, "elbo": list(self.elbo), "q": self.q.tolist()}


def _log_beta(a):
    return float(sum(math.lgamma(v) for v in a) - math.lgamma(float(np.sum(a))))


def _elbo(log_r, q, alpha, alpha0):
    # E[log p(Y*, pi)] - E[log q] up to terms constant in (q, alpha)
    e_log_pi = digamma(alpha) - digamma(np.array(alpha.sum()))
    with np.errstate(divide="ignore", invalid="ignore"):
        ent = -np.where(q > 0, q * np.log(q), 0.0).sum()
    data = float((q * log_r).sum() + (q.sum(axis=0) * e_log_pi).sum())
    return data + ent + _log_beta(alpha) - _log_beta(alpha0) + float(((alpha0 - alpha) * e_log_pi).sum())


def vbi_unknown_prevalence(loglik, log_marginal, alpha0, max_iters: int = 500, tol: float = 1e-8):
    """Mean-field inference of an unknown test prevalence pi ~ Dir(alpha0).

    Alternates q_n(y) proportional to [p(y|x_n,w)/p(y|w)] exp(psi(alpha_y) - psi(sum alpha))
    and alpha = alpha0 + sum_n q_n until max |delta alpha| < tol.
    Returns (DirichletState, q).
    """
    log_r = np.atleast_2d(np.asarray(loglik, dtype=float)) - np.asarray(log_marginal, dtype=float)
    alpha0 = np.asarray(alpha0, dtype=float)
    if np.any(~(alpha0 > 0)):
        raise ValueError("alpha0 must be strictly positive")
    if log_r.shape[0] < 1:
        raise ValueError("need at least one test point")
    q = _normalize_log(log_r + np.log(alpha0 / alpha0.sum()))
    alpha = alpha0 + q.sum(axis=0)
    trace = [_elbo(log_r, q, alpha, alpha0)]
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        e_log_pi = digamma(alpha) - digamma(np.array(alpha.sum()))
        q = _normalize_log(log_r + e_log_pi)
        new_alpha = alpha0 + q.sum(axis=0)
        delta = np.max(np.abs(new_alpha - alpha))
        alpha = new_alpha
        trace.append(_elbo(log_r, q, alpha, alpha0))
        if delta < tol:
            converged = True
            break
    return DirichletState(alpha, q, converged, it, trace), q


def heuristic_alpha0(marginal, k: float = 1.0) -> np.ndarray:
    """alpha0 proportional to p(y|w), scaled so that its smallest entry is k."""
    marginal = as_label_dist(marginal, strict=True, name="marginal")
    if k <= 0:
        raise ValueError("k must be positive")
    return k * marginal / marginal.min()


def decide(posterior, E) -> int:
    """argmin_a sum_y E[a, y] posterior[y]; ties go to the lowest index."""
    E = np.asarray(E, dtype=float)
    if not np.all(np.isfinite(E)):
        raise ValueError("decision loss must be finite")
    risk = E @ np.asarray(posterior, dtype=float)
    return int(np.flatnonzero(risk == risk.min())[0])


def decide_batch(Q, E) -> np.ndarray:
    return np.array([decide(q, E) for q in np.atleast_2d(Q)], dtype=int)


def binary_threshold(E) -> float:
    """Posterior threshold on p(y=1) above which action 1 is optimal."""
    E = np.asarray(E, dtype=float)
    return 1.0 / (1.0 + (E[0, 1] - E[1, 1]) / (E[1, 0] - E[0, 0]))


def zero_one_loss(n: int) -> np.ndarray:
    return 1.0 - np.eye(n)
