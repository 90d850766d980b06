"""Auxiliary marginal model q_psi(w) approximating p(y|w).

``constant`` kind: q = softmax(b).
``affine`` kind:   q = softmax(A^T (w - o) + b).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .optim import AdamState, adam_step


@dataclass(frozen=True)
class AuxSpec:
    kind: str
    main_param_dim: int
    n_labels: int
    lr_bias: float
    lr_offset: float
    lr_matrix: float
    sparsity_strength: float = 1e-3

    def __post_init__(self):
        if self.kind not in ("constant", "affine"):
            raise ValueError(f"unknown aux kind {self.kind!r}")
        if self.kind == "affine" and self.main_param_dim < 1:
            raise ValueError("affine aux model needs P >= 1")
        if min(self.lr_bias, self.lr_offset, self.lr_matrix) < 0:
            raise ValueError("aux learning rates must be non-negative")
        if self.sparsity_strength < 0:
            raise ValueError("sparsity_strength must be >= 0")

    @classmethod
    def default(cls, kind: str, main_param_dim: int, n_labels: int, main_lr: float,
                sparsity_strength: float = 1e-3) -> "AuxSpec":
        # bias learns 10x faster than the main model, matrix and offset follow it
        return cls(kind, main_param_dim, n_labels, lr_bias=10.0 * main_lr,
                   lr_offset=main_lr, lr_matrix=main_lr, sparsity_strength=sparsity_strength)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "main_param_dim": self.main_param_dim, "n_labels": self.n_labels,
                "lr_bias": self.lr_bias, "lr_offset": self.lr_offset, "lr_matrix": self.lr_matrix,
                "sparsity_strength": self.sparsity_strength}

    @classmethod
    def from_dict(cls, d: dict) -> "AuxSpec":
        return cls(**d)


@dataclass
class AuxParams:
    b: np.ndarray                 # logits (constant kind) or bias (affine kind)
    A: np.ndarray | None = None   # (P, K)
    o: np.ndarray | None = None   # (P,)

    def copy(self) -> "AuxParams":
        return AuxParams(self.b.copy(), None if self.A is None else self.A.copy(),
                         None if self.o is None else self.o.copy())

    def to_dict(self) -> dict:
        d = {"b": self.b.tolist()}
        if self.A is not None:
            d["A"] = self.A.tolist()
            d["o"] = self.o.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AuxParams":
        A = d.get("A")
        return cls(np.asarray(d["b"], dtype=float),
                   None if A is None else np.asarray(A, dtype=float).reshape(len(A), -1),
                   None if A is None else np.asarray(d["o"], dtype=float))


def aux_init(spec: AuxSpec, w0, p_Y) -> AuxParams:
    """eta = log p_Y; for the affine kind A = 0 and o = w0."""
    b = np.log(np.asarray(p_Y, dtype=float))
    if spec.kind == "constant":
        return AuxParams(b)
    w0 = np.asarray(w0, dtype=float)
    return AuxParams(b, np.zeros((spec.main_param_dim, spec.n_labels)), w0.copy())


def _logits(spec, psi, w):
    if spec.kind == "constant":
        return psi.b
    w = np.asarray(w, dtype=float)
    if w.shape != (spec.main_param_dim,) or psi.A.shape != (spec.main_param_dim, spec.n_labels):
        raise ValueError("aux parameter dimensions do not match the main parameter vector")
    return psi.A.T @ (w - psi.o) + psi.b


def aux_forward(spec: AuxSpec, psi: AuxParams, w) -> np.ndarray:
    eta = _logits(spec, psi, w)
    if eta.shape != (spec.n_labels,):
        raise ValueError("aux logits have the wrong number of labels")
    m = eta.max()
    return eta - m - np.log(np.exp(eta - m).sum())


def aux_kl_loss(phat, log_q) -> float:
    """-sum_y p_B(y) log q(y), with p_B treated as a constant."""
    return float(-np.dot(np.asarray(phat, dtype=float), np.asarray(log_q, dtype=float)))


def aux_kl_grad(spec: AuxSpec, psi: AuxParams, w, phat) -> AuxParams:
    """Gradient of aux_kl_loss with respect to psi, packed like AuxParams."""
    phat = np.asarray(phat, dtype=float)
    q = np.exp(aux_forward(spec, psi, w))
    d_eta = -phat + phat.sum() * q
    if spec.kind == "constant":
        return AuxParams(d_eta)
    diff = np.asarray(w, dtype=float) - psi.o
    return AuxParams(d_eta, np.outer(diff, d_eta), -psi.A @ d_eta)


@dataclass
class AuxOptState:
    b: AdamState
    A: AdamState | None = None
    o: AdamState | None = None

    @classmethod
    def fresh(cls, psi: AuxParams) -> "AuxOptState":
        if psi.A is None:
            return cls(AdamState.zeros(psi.b.shape))
        return cls(AdamState.zeros(psi.b.shape), AdamState.zeros(psi.A.shape),
                   AdamState.zeros(psi.o.shape))


def soft_threshold(A, tau):
    return np.sign(A) * np.maximum(np.abs(A) - tau, 0.0)


def aux_step(spec: AuxSpec, psi: AuxParams, grad: AuxParams, state: AuxOptState | None = None,
             betas=(0.9, 0.999), eps: float = 1e-8):
    """Adam step per block (b, A, o) with its own learning rate, then soft-threshold A.

    Returns (new_psi, new_state).
    """
    if state is None:
        state = AuxOptState.fresh(psi)
    if grad.b.shape != psi.b.shape:
        raise ValueError("aux gradient has the wrong shape")
    b, sb = adam_step(state.b, psi.b, grad.b, spec.lr_bias, betas, eps)
    if spec.kind == "constant":
        return AuxParams(b), AuxOptState(sb)
    A, sA = adam_step(state.A, psi.A, grad.A, spec.lr_matrix, betas, eps)
    o, so = adam_step(state.o, psi.o, grad.o, spec.lr_offset, betas, eps)
    A = soft_threshold(A, spec.lr_matrix * spec.sparsity_strength)
    return AuxParams(b, A, o), AuxOptState(sb, sA, so)
