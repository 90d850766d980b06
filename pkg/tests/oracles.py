"""Independent reference computations shared by several test modules."""
import itertools

import numpy as np

from prevcorr.marginal import WeightPolicy, beta_weights, marginal_estimate, marginal_vjp
from prevcorr.models import log_lik_batch, vjp_log_lik


def small_population(spec, w_star, support, probs):
    """Joint table p(x, y) and class conditionals p(x|y) under the generating parameters."""
    P = np.exp(log_lik_batch(spec, w_star, support))
    joint = probs[:, None] * P
    p_Y = joint.sum(axis=0)
    return joint, p_Y, (joint / p_Y).T


def phat_and_grad(spec, w, Xb, yb, beta):
    """p_B(y') and d p_B(y')/dw for one minibatch via the library path."""
    f = log_lik_batch(spec, w, Xb)
    est = marginal_estimate(f, yb, beta)
    ph = np.exp(est.log_phat)
    K = ph.size
    grads = np.stack([ph[k] * vjp_log_lik(spec, w, Xb, marginal_vjp(f, est, np.eye(K)[k])) for k in range(K)])
    return ph, grads


def enumerate_fixed_counts(spec, w, support, cond, counts, p_Y, policy):
    """Exact expectation of p_B and its gradient over all fixed-count minibatches.

    Slots of class y draw x independently from cond[y].
    """
    labels = np.concatenate([np.full(c, k) for k, c in enumerate(counts)])
    m = support.shape[0]
    mean_p = 0.0
    mean_g = 0.0
    for combo in itertools.product(range(m), repeat=labels.size):
        combo = np.array(combo)
        prob = np.prod(cond[labels, combo])
        if prob == 0.0:
            continue
        beta = beta_weights(policy, p_Y, labels)
        ph, g = phat_and_grad(spec, w, support[combo], labels, beta)
        mean_p = mean_p + prob * ph
        mean_g = mean_g + prob * g
    return mean_p, mean_g


def enumerate_iid_labels(spec, w, support, cond, p_tilde, n_B, p_Y, policy):
    """Exact expectation over minibatches whose labels are iid from p_tilde.

    Under the empirical policy the expectation is conditional on every label
    being present; the conditioning mass is returned as well.
    """
    K, m = cond.shape
    pairs = [(k, i) for k in range(K) for i in range(m)]
    mean_p = 0.0
    mean_g = 0.0
    mass = 0.0
    for combo in itertools.product(range(len(pairs)), repeat=n_B):
        labels = np.array([pairs[c][0] for c in combo])
        xs = np.array([pairs[c][1] for c in combo])
        prob = np.prod(p_tilde[labels] * cond[labels, xs])
        if prob == 0.0:
            continue
        if policy.kind == "empirical" and np.any(np.bincount(labels, minlength=K) == 0):
            continue
        ph, g = phat_and_grad(spec, w, support[xs], labels, beta_weights(policy, p_Y, labels))
        mean_p = mean_p + prob * ph
        mean_g = mean_g + prob * g
        mass += prob
    return mean_p / mass, mean_g / mass, mass
