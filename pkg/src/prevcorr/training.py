"""Minibatch training loop with nll, iw and ig losses and the auxiliary marginal model."""
from __future__ import annotations

import json
import logging
import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .auxiliary import (AuxOptState, AuxParams, AuxSpec, aux_forward, aux_init, aux_kl_grad,
                        aux_kl_loss, aux_step)
from .data import Dataset
from .losses import PriorSpec, ig_loss, iw_loss, nll_loss, prevalence_prior_loss, prior_loss
from .marginal import WeightPolicy, as_label_dist, beta_weights, marginal_estimate
from .models import ModelSpec, init_params, log_lik_batch, param_count, vjp_log_lik
from .optim import AdamState, adam_step

log = logging.getLogger(__name__)


class NumericalError(RuntimeError):
    pass


def rng_for(seed: int, stream: str) -> np.random.Generator:
    """Independent generator for a named sub-stream ("data", "init", "minibatch", ...)."""
    key = zlib.crc32(stream.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(key,)))


@dataclass(frozen=True)
class LossKind:
    kind: str = "nll"
    prior: PriorSpec = field(default_factory=PriorSpec)
    true_prevalence: tuple | None = None
    prevalence_prior_N: float = 0.0
    prevalence_prior_dist: tuple | None = None

    def __post_init__(self):
        if self.kind not in ("nll", "iw", "ig"):
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if self.kind in ("iw", "ig") and self.true_prevalence is None:
            raise ValueError(f"{self.kind} loss needs a configured true prevalence")
        if self.prevalence_prior_N < 0:
            raise ValueError("prevalence_prior_N must be >= 0")
        if self.prevalence_prior_N > 0 and self.kind != "ig":
            raise ValueError("the prevalence prior only applies to the ig loss")

    def to_dict(self):
        return {"kind": self.kind, "prior": self.prior.to_dict(),
                "true_prevalence": None if self.true_prevalence is None else list(self.true_prevalence),
                "prevalence_prior_N": self.prevalence_prior_N,
                "prevalence_prior_dist": None if self.prevalence_prior_dist is None
                else list(self.prevalence_prior_dist)}

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["prior"] = PriorSpec(**d.get("prior", {}))
        for k in ("true_prevalence", "prevalence_prior_dist"):
            if d.get(k) is not None:
                d[k] = tuple(d[k])
        return cls(**d)


@dataclass(frozen=True)
class MinibatchPolicy:
    kind: str = "iid-uniform"
    batch_size: int = 32
    counts: tuple | None = None

    def __post_init__(self):
        if self.kind not in ("iid-uniform", "fixed-counts"):
            raise ValueError(f"unknown minibatch policy {self.kind!r}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.kind == "fixed-counts":
            if self.counts is None or sum(self.counts) != self.batch_size or min(self.counts) < 1:
                raise ValueError("fixed-counts needs strictly positive counts summing to batch_size")

    def expected_dist(self, p_F) -> np.ndarray:
        if self.kind == "fixed-counts":
            c = np.asarray(self.counts, dtype=float)
            return c / c.sum()
        return np.asarray(p_F, dtype=float)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    lr: float = 1e-2
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    seed: int = 0
    weight_policy: str = "empirical"
    weight_fallback: str = "error"
    full_batch: bool = False

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be positive")
        if self.lr < 0:
            raise ValueError("lr must be >= 0")


class MinibatchSampler:
    """Yields index arrays; ceil(N/n_B) minibatches per epoch."""

    def __init__(self, labels, policy: MinibatchPolicy, n_labels: int, rng: np.random.Generator,
                 full_batch: bool = False):
        self.labels = np.asarray(labels, dtype=int)
        self.policy = policy
        self.rng = rng
        self.full_batch = full_batch
        self.N = self.labels.size
        if policy.kind == "fixed-counts" and not full_batch:
            if len(policy.counts) != n_labels:
                raise ValueError("fixed-counts needs one count per label")
            self.pools = [np.flatnonzero(self.labels == k) for k in range(n_labels)]
            for k, pool in enumerate(self.pools):
                if pool.size < policy.counts[k]:
                    raise ValueError(f"label {k} has {pool.size} samples, fewer than its count "
                                     f"{policy.counts[k]} per minibatch")
            self.queues = [rng.permutation(p) for p in self.pools]
            self.pos = [0] * n_labels

    def batches_per_epoch(self) -> int:
        return 1 if self.full_batch else math.ceil(self.N / self.policy.batch_size)

    def _take(self, k, m):
        out = []
        while m > 0:
            if self.pos[k] >= self.queues[k].size:
                self.queues[k] = self.rng.permutation(self.pools[k])
                self.pos[k] = 0
            j = min(m, self.queues[k].size - self.pos[k])
            out.append(self.queues[k][self.pos[k]:self.pos[k] + j])
            self.pos[k] += j
            m -= j
        return np.concatenate(out)

    def epoch(self):
        if self.full_batch:
            yield np.arange(self.N)
            return
        nb = self.batches_per_epoch()
        if self.policy.kind == "iid-uniform":
            perm = self.rng.permutation(self.N)
            B = self.policy.batch_size
            for i in range(nb):
                yield perm[i * B:(i + 1) * B]
        else:
            for _ in range(nb):
                yield np.concatenate([self._take(k, c) for k, c in enumerate(self.policy.counts)])


@dataclass
class TrainResult:
    w: np.ndarray
    aux_params: AuxParams | None
    log: list
    log_marginal: np.ndarray | None   # full-data estimate of log p(y|w) at the final w


def _full_log_marginal(spec, w, X, y, p_Y):
    if p_Y is None:
        return None
    K = spec.n_labels
    if np.any(np.bincount(y, minlength=K) == 0):
        return None
    f = log_lik_batch(spec, w, X)
    beta = beta_weights(WeightPolicy("empirical"), p_Y, y)
    return marginal_estimate(f, y, beta).log_phat


def batch_objective(spec: ModelSpec, w, Xb, yb, loss: LossKind, p_F, p_Y, weight_policy: WeightPolicy,
                    N: int, log_q=None, full_batch: bool = False, prevalence_prior_dist=None):
    """Loss value, gradient in w and marginal estimate (ig only) for one minibatch.

    ``weight_policy`` carries the design distribution p~ and is used both for
    the omega weights (target p_F) and the beta weights (target p_Y).
    """
    f = log_lik_batch(spec, w, Xb)
    omega = beta_weights(weight_policy, p_F, yb)
    est = None
    if loss.kind == "nll":
        value, G = nll_loss(f, yb, omega, N)
    elif loss.kind == "iw":
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(p_F > 0, p_Y / p_F, 0.0)
        value, G = iw_loss(f, yb, omega * ratio[yb], N)
    else:
        est = marginal_estimate(f, yb, beta_weights(weight_policy, p_Y, yb))
        if full_batch:
            log_q = est.log_phat
        extra, v_pr = None, 0.0
        if loss.prevalence_prior_N > 0:
            pr = p_Y if prevalence_prior_dist is None else prevalence_prior_dist
            v_pr, extra = prevalence_prior_loss(log_q, pr, loss.prevalence_prior_N)
        value, G = ig_loss(f, yb, est, log_q, omega, N, full_batch=full_batch, extra_marginal_grad=extra)
        value += v_pr
    v_prior, g_prior = prior_loss(loss.prior, w)
    return value + v_prior, vjp_log_lik(spec, w, Xb, G) + g_prior, est


def train(data, spec: ModelSpec, loss: LossKind, policy: MinibatchPolicy,
          aux_spec: AuxSpec | None, config: TrainConfig, w0=None) -> TrainResult:
    """Minimize the configured loss with Adam.

    Each step: forward the minibatch, estimate log p_B with beta weights (ig),
    take the marginal value from q_psi, route the corrected gradient, step
    the main model and then one KL step of the auxiliary model.
    """
    if isinstance(data, Dataset):
        X, y = data.X, data.y
    else:
        X, y = data
        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.asarray(y, dtype=int)
    N, K = y.size, spec.n_labels
    if N == 0:
        raise ValueError("cannot train on an empty dataset")
    if y.max() >= K:
        raise ValueError("label out of range for the model's label space")
    counts = np.bincount(y, minlength=K)
    p_F = counts / N
    p_Y = None if loss.true_prevalence is None else as_label_dist(loss.true_prevalence, name="true prevalence")
    full = config.full_batch
    if loss.kind == "ig" and aux_spec is None and not full:
        raise ValueError("ig loss needs an auxiliary model spec outside full-batch mode")

    w = init_params(spec, rng_for(config.seed, "init")) if w0 is None else np.array(w0, dtype=float)
    if w.shape != (param_count(spec),):
        raise ValueError("initial parameter vector has the wrong size")
    sampler = MinibatchSampler(y, policy, K, rng_for(config.seed, "minibatch"), full_batch=full)
    p_tilde = p_F if full else policy.expected_dist(p_F)
    omega_policy = WeightPolicy(config.weight_policy, tuple(p_tilde), config.weight_fallback)

    psi = aux_state = None
    if aux_spec is not None and loss.kind == "ig":
        psi = aux_init(aux_spec, w, p_Y)
        aux_state = AuxOptState.fresh(psi)
    opt = AdamState.zeros(w.shape)
    pr_N = loss.prevalence_prior_N
    pr_dist = None
    if pr_N > 0:
        pr_dist = np.asarray(loss.prevalence_prior_dist if loss.prevalence_prior_dist is not None
                             else p_Y, dtype=float)

    history = []
    for epoch in range(config.epochs):
        values, kls = [], []
        phat = None
        for b, idx in enumerate(sampler.epoch()):
            Xb, yb = X[idx], y[idx]
            value, grad, est = batch_objective(spec, w, Xb, yb, loss, p_F, p_Y, omega_policy, N,
                                               None if (full or psi is None) else aux_forward(aux_spec, psi, w),
                                               full, pr_dist)
            phat = None if est is None else np.exp(est.log_phat)
            if not (math.isfinite(value) and np.all(np.isfinite(grad))):
                raise NumericalError(
                    f"non-finite loss or gradient at epoch {epoch}, minibatch {b} "
                    f"(sample indices {idx[:10].tolist()}{'...' if idx.size > 10 else ''}, "
                    f"label counts {np.bincount(yb, minlength=K).tolist()}, loss value {value!r})")
            if psi is not None:
                log_q_now = aux_forward(aux_spec, psi, w)
                kls.append(aux_kl_loss(phat, log_q_now))
                psi, aux_state = aux_step(aux_spec, psi, aux_kl_grad(aux_spec, psi, w, phat),
                                          aux_state, config.betas, config.eps)
            w, opt = adam_step(opt, w, grad, config.lr, config.betas, config.eps)
            values.append(value)
        entry = {"epoch": epoch, "loss": float(np.mean(values))}
        if phat is not None:
            entry["phat"] = phat.tolist()
        if psi is not None:
            entry["aux_kl"] = float(np.mean(kls))
            entry["q_psi"] = np.exp(aux_forward(aux_spec, psi, w)).tolist()
        history.append(entry)
        log.debug("epoch %d loss %.6g", epoch, entry["loss"])

    return TrainResult(w, psi, history, _full_log_marginal(spec, w, X, y, p_Y))


# checkpoints

def checkpoint_dict(spec: ModelSpec, result: TrainResult, loss: LossKind, aux_spec: AuxSpec | None,
                    seed: int, extra: dict | None = None) -> dict:
    d = {
        "model": spec.to_dict(),
        "w": result.w.tolist(),
        "loss": loss.to_dict(),
        "aux_spec": None if aux_spec is None or result.aux_params is None else aux_spec.to_dict(),
        "aux_params": None if result.aux_params is None else result.aux_params.to_dict(),
        "log_marginal": None if result.log_marginal is None else result.log_marginal.tolist(),
        "seed": int(seed),
        "log": result.log,
    }
    if extra:
        d.update(extra)
    return d


@dataclass
class Checkpoint:
    spec: ModelSpec
    w: np.ndarray
    loss: LossKind
    aux_spec: AuxSpec | None
    aux_params: AuxParams | None
    log_marginal: np.ndarray | None
    seed: int
    raw: dict

    def marginal_log(self) -> np.ndarray:
        """log p(y|w_hat): the trained auxiliary model if present, else the stored full-data estimate."""
        if self.aux_params is not None:
            return aux_forward(self.aux_spec, self.aux_params, self.w)
        if self.log_marginal is not None:
            return self.log_marginal
        raise ValueError("checkpoint carries no marginal estimate; train with a true prevalence")


def save_checkpoint(path, d: dict) -> None:
    # repr-exact floats give a bit-exact round trip
    Path(path).write_text(json.dumps(d, indent=1) + "\n")


def load_checkpoint(path) -> Checkpoint:
    d = json.loads(Path(path).read_text())
    return checkpoint_from_dict(d)


def checkpoint_from_dict(d: dict) -> Checkpoint:
    spec = ModelSpec.from_dict(d["model"])
    w = np.asarray(d["w"], dtype=float)
    if w.shape != (param_count(spec),):
        raise ValueError("checkpoint parameter vector does not match its model spec")
    aux_spec = AuxSpec.from_dict(d["aux_spec"]) if d.get("aux_spec") else None
    aux_params = AuxParams.from_dict(d["aux_params"]) if d.get("aux_params") else None
    lm = d.get("log_marginal")
    return Checkpoint(spec, w, LossKind.from_dict(d["loss"]), aux_spec, aux_params,
                      None if lm is None else np.asarray(lm, dtype=float), int(d.get("seed", 0)), d)
