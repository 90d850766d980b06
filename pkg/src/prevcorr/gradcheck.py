"""Finite-difference checks of full-batch loss gradients for every model/loss combination."""
from __future__ import annotations

import numpy as np

from .losses import PriorSpec
from .marginal import WeightPolicy
from .models import LabelSpace, ModelSpec, param_count
from .training import LossKind, batch_objective

MODEL_CASES = (
    ModelSpec("logistic-binary", 3),
    ModelSpec("logistic-multinomial", 2, LabelSpace(3)),
    ModelSpec("mlp-1hidden", 2, LabelSpace(3), hidden_dim=4, activation="tanh"),
    ModelSpec("mlp-1hidden", 2, LabelSpace(2), hidden_dim=3, activation="relu"),
)


def loss_cases(K):
    p_Y = tuple(np.linspace(1.0, 2.0, K) / np.linspace(1.0, 2.0, K).sum())
    t = PriorSpec("student-t", nu=3.0, scale=2.0)
    return {
        "nll": LossKind("nll"),
        "iw": LossKind("iw", true_prevalence=p_Y),
        "ig": LossKind("ig", true_prevalence=p_Y),
        "ig+prevalence-prior": LossKind("ig", true_prevalence=p_Y, prevalence_prior_N=5.0),
        "ig+student-t": LossKind("ig", prior=t, true_prevalence=p_Y),
    }


def full_batch_value_grad(spec, w, X, y, loss):
    K = spec.n_labels
    p_F = np.bincount(y, minlength=K) / y.size
    p_Y = None if loss.true_prevalence is None else np.asarray(loss.true_prevalence)
    pol = WeightPolicy("empirical")
    value, grad, _ = batch_objective(spec, w, X, y, loss, p_F, p_Y, pol, y.size, None, True)
    return value, grad


def check_case(spec, loss, rng, n=12, h=1e-5):
    """Max relative error between the analytic and central-difference gradient."""
    K = spec.n_labels
    X = rng.standard_normal((n, spec.input_dim))
    y = np.concatenate([np.arange(K), rng.integers(0, K, n - K)])
    w = 0.7 * rng.standard_normal(param_count(spec))
    _, g = full_batch_value_grad(spec, w, X, y, loss)
    fd = np.empty_like(w)
    for i in range(w.size):
        e = np.zeros_like(w)
        e[i] = h
        fd[i] = (full_batch_value_grad(spec, w + e, X, y, loss)[0]
                 - full_batch_value_grad(spec, w - e, X, y, loss)[0]) / (2 * h)
    scale = np.maximum(np.abs(fd), np.maximum(np.abs(g), 1e-3))
    return float(np.max(np.abs(g - fd) / scale))


def run_gradcheck(seed: int = 0, draws: int = 3, rtol: float = 1e-4) -> dict:
    rng = np.random.default_rng(seed)
    rows = []
    for spec in MODEL_CASES:
        for name, loss in loss_cases(spec.n_labels).items():
            err = max(check_case(spec, loss, rng) for _ in range(draws))
            rows.append({"model": spec.kind, "activation": spec.activation if spec.kind == "mlp-1hidden" else None,
                         "loss": name, "max_rel_error": err, "pass": err < rtol})
    return {"rtol": rtol, "seed": seed, "draws": draws, "cases": rows, "all_pass": all(r["pass"] for r in rows)}
