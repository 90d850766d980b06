"""Parametric likelihood models p(y|x, w) with hand-written gradients.

Three kinds are supported:

* ``logistic-binary``: weights (d,) followed by one bias, label 1 has logit x.w + b.
* ``logistic-multinomial``: weight matrix (d, K) row-major followed by K biases.
* ``mlp-1hidden``: W1 (d, h), b1 (h,), W2 (h, K), b2 (K,), tanh or relu hidden layer.

Linear maps are accumulated one input column at a time so that the value
computed for a row never depends on the other rows of the batch.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

KINDS = ("logistic-binary", "logistic-multinomial", "mlp-1hidden")
ACTIVATIONS = ("tanh", "relu")


@dataclass(frozen=True)
class LabelSpace:
    size: int
    names: tuple[str, ...] | None = None

    def __post_init__(self):
        if int(self.size) != self.size or self.size < 2:
            raise ValueError(f"label space needs at least 2 labels, got {self.size}")
        if self.names is not None and len(self.names) != self.size:
            raise ValueError("number of label names does not match label space size")


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    input_dim: int
    label_space: LabelSpace = field(default_factory=lambda: LabelSpace(2))
    hidden_dim: int | None = None
    activation: str = "tanh"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}; expected one of {KINDS}")
        if self.input_dim < 1:
            raise ValueError("input_dim must be positive")
        if self.kind == "logistic-binary" and self.label_space.size != 2:
            raise ValueError("logistic-binary requires exactly 2 labels")
        if self.kind == "mlp-1hidden":
            if self.hidden_dim is None or self.hidden_dim < 1:
                raise ValueError("mlp-1hidden requires a positive hidden_dim")
            if self.activation not in ACTIVATIONS:
                raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def n_labels(self) -> int:
        return self.label_space.size

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "input_dim": self.input_dim, "n_labels": self.n_labels}
        if self.label_space.names is not None:
            d["label_names"] = list(self.label_space.names)
        if self.kind == "mlp-1hidden":
            d["hidden_dim"] = self.hidden_dim
            d["activation"] = self.activation
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        names = d.get("label_names")
        ls = LabelSpace(int(d.get("n_labels", 2)), tuple(names) if names is not None else None)
        return cls(kind=d["kind"], input_dim=int(d["input_dim"]), label_space=ls,
                   hidden_dim=d.get("hidden_dim"), activation=d.get("activation", "tanh"))


def param_count(spec: ModelSpec) -> int:
    d, K = spec.input_dim, spec.n_labels
    if spec.kind == "logistic-binary":
        return d + 1
    if spec.kind == "logistic-multinomial":
        return K * (d + 1)
    h = spec.hidden_dim
    return d * h + h + h * K + K


def init_params(spec: ModelSpec, rng: np.random.Generator | None = None) -> np.ndarray:
    """Zeros for the logistic kinds; U(-1/sqrt(fan_in), 1/sqrt(fan_in)) per layer for the MLP."""
    P = param_count(spec)
    if spec.kind != "mlp-1hidden":
        return np.zeros(P)
    if rng is None:
        rng = np.random.default_rng(0)
    d, h, K = spec.input_dim, spec.hidden_dim, spec.n_labels
    a1, a2 = 1.0 / np.sqrt(d), 1.0 / np.sqrt(h)
    return np.concatenate([
        rng.uniform(-a1, a1, d * h), rng.uniform(-a1, a1, h),
        rng.uniform(-a2, a2, h * K), rng.uniform(-a2, a2, K),
    ])


def _unpack_mlp(spec, w):
    d, h, K = spec.input_dim, spec.hidden_dim, spec.n_labels
    i = 0
    W1 = w[i:i + d * h].reshape(d, h); i += d * h
    b1 = w[i:i + h]; i += h
    W2 = w[i:i + h * K].reshape(h, K); i += h * K
    b2 = w[i:i + K]
    return W1, b1, W2, b2


def _affine(X, W, b):
    # column-by-column accumulation keeps each output row independent of the batch
    out = np.broadcast_to(b, (X.shape[0], W.shape[1])).copy()
    for j in range(X.shape[1]):
        out += X[:, j:j + 1] * W[j]
    return out


def log_softmax(Z: np.ndarray) -> np.ndarray:
    """Row-wise log-softmax of an (n, K) array."""
    m = Z.max(axis=1, keepdims=True)
    s = np.exp(Z[:, 0] - m[:, 0])
    for k in range(1, Z.shape[1]):
        s = s + np.exp(Z[:, k] - m[:, 0])
    return Z - (m + np.log(s)[:, None])


def _check(spec, w, X):
    w = np.asarray(w, dtype=float)
    X = np.asarray(X, dtype=float)
    if w.ndim != 1 or w.shape[0] != param_count(spec):
        raise ValueError(f"parameter vector has shape {w.shape}, expected ({param_count(spec)},)")
    if X.ndim != 2 or X.shape[1] != spec.input_dim:
        raise ValueError(f"feature matrix has shape {X.shape}, expected (n, {spec.input_dim})")
    return w, X


def _forward(spec, w, X):
    """Return (logits, cache) for the batch."""
    d, K = spec.input_dim, spec.n_labels
    if spec.kind == "logistic-binary":
        z = _affine(X, w[:d].reshape(d, 1), w[d:d + 1])
        return np.hstack([np.zeros_like(z), z]), None
    if spec.kind == "logistic-multinomial":
        return _affine(X, w[:d * K].reshape(d, K), w[d * K:]), None
    W1, b1, W2, b2 = _unpack_mlp(spec, w)
    a = _affine(X, W1, b1)
    hid = np.tanh(a) if spec.activation == "tanh" else np.maximum(a, 0.0)
    return _affine(hid, W2, b2), (a, hid)


def log_lik_batch(spec: ModelSpec, w, X) -> np.ndarray:
    """Matrix of log p(y|x_n, w), shape (n, |Y|)."""
    w, X = _check(spec, w, X)
    Z, _ = _forward(spec, w, X)
    return log_softmax(Z)


def log_lik(spec: ModelSpec, w, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError("x must be a single feature vector")
    return log_lik_batch(spec, w, x[None, :])[0]


def vjp_log_lik(spec: ModelSpec, w, X, G) -> np.ndarray:
    """Gradient of sum(G * log_lik_batch(spec, w, X)) with respect to w."""
    w, X = _check(spec, w, X)
    G = np.asarray(G, dtype=float)
    Z, cache = _forward(spec, w, X)
    p = np.exp(log_softmax(Z))
    dZ = G - p * G.sum(axis=1, keepdims=True)
    d, K = spec.input_dim, spec.n_labels
    if spec.kind == "logistic-binary":
        dz = dZ[:, 1]
        return np.concatenate([X.T @ dz, [dz.sum()]])
    if spec.kind == "logistic-multinomial":
        return np.concatenate([(X.T @ dZ).ravel(), dZ.sum(axis=0)])
    a, hid = cache
    _, _, W2, _ = _unpack_mlp(spec, w)
    dW2 = hid.T @ dZ
    dh = dZ @ W2.T
    da = dh * (1.0 - hid ** 2) if spec.activation == "tanh" else dh * (a > 0)
    return np.concatenate([(X.T @ da).ravel(), da.sum(axis=0), dW2.ravel(), dZ.sum(axis=0)])


def grad_log_lik(spec: ModelSpec, w, x, y: int) -> np.ndarray:
    """Exact gradient of log p(y|x, w) with respect to w."""
    x = np.asarray(x, dtype=float)
    if not 0 <= y < spec.n_labels:
        raise ValueError(f"label {y} out of range")
    G = np.zeros((1, spec.n_labels))
    G[0, y] = 1.0
    return vjp_log_lik(spec, w, x[None, :], G)


def jacobian_log_lik(spec: ModelSpec, w, X) -> np.ndarray:
    """Per-sample, per-label gradients, shape (n, |Y|, P)."""
    X = np.asarray(X, dtype=float)
    n, K = X.shape[0], spec.n_labels
    J = np.empty((n, K, param_count(spec)))
    for i in range(n):
        for k in range(K):
            J[i, k] = grad_log_lik(spec, w, X[i], k)
    return J


def log_lik_many(spec: ModelSpec, Wm, X) -> np.ndarray:
    """log p(y|x_n, w_m) for a stack of parameter vectors, shape (m, n, |Y|).

    Only the logistic kinds are vectorized; they are the ones small enough for grids.
    """
    Wm = np.atleast_2d(np.asarray(Wm, dtype=float))
    X = np.asarray(X, dtype=float)
    d, K = spec.input_dim, spec.n_labels
    if spec.kind == "logistic-binary":
        z = np.einsum("md,nd->mn", Wm[:, :d], X) + Wm[:, d:d + 1]
        # log sigma(z) and log sigma(-z)
        return np.stack([-np.logaddexp(0.0, z), -np.logaddexp(0.0, -z)], axis=-1)
    if spec.kind == "logistic-multinomial":
        W = Wm[:, :d * K].reshape(-1, d, K)
        Z = np.einsum("mdk,nd->mnk", W, X) + Wm[:, None, d * K:]
        m = Z.max(axis=-1, keepdims=True)
        return Z - m - np.log(np.exp(Z - m).sum(axis=-1, keepdims=True))
    return np.stack([log_lik_batch(spec, w, X) for w in Wm])


def eta_to_params(eta0, eta1):
    """Map the two cell logits (eta0, eta1) of the binary-covariate model to (slope, bias)."""
    eta0 = np.asarray(eta0, dtype=float)
    eta1 = np.asarray(eta1, dtype=float)
    return np.stack([eta1 - eta0, eta0], axis=-1)


def params_to_eta(w):
    w = np.asarray(w, dtype=float)
    return np.stack([w[..., 1], w[..., 1] + w[..., 0]], axis=-1)
