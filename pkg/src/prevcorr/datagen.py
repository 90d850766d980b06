"""Seeded synthetic data: true-population, label-biased and selection-based sampling."""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .marginal import FinitePopulation, as_label_dist, exact_marginal
from .models import ModelSpec, log_lik_batch
from .training import rng_for

MAX_PROPOSALS = 10 ** 6


# covariate laws

@dataclass(frozen=True)
class FiniteCovariates:
    support: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        pop = FinitePopulation(self.support, self.probs)
        object.__setattr__(self, "support", pop.support)
        object.__setattr__(self, "probs", pop.probs)

    @property
    def dim(self):
        return self.support.shape[1]

    def sample(self, rng, n):
        return self.support[rng.choice(self.probs.size, size=n, p=self.probs)]

    def quadrature(self) -> FinitePopulation:
        return FinitePopulation(self.support, self.probs)

    def to_dict(self):
        return {"kind": "finite", "support": self.support.tolist(), "probs": self.probs.tolist()}


def _gauss_hermite(dim, k):
    z, w = np.polynomial.hermite_e.hermegauss(k)
    w = w / w.sum()
    Z = np.array(list(itertools.product(z, repeat=dim)))
    W = np.prod(np.array(list(itertools.product(w, repeat=dim))), axis=1)
    return Z, W


_GH_NODES = {1: 100, 2: 40, 3: 20}


@dataclass(frozen=True)
class GaussianMixtureCovariates:
    weights: tuple
    means: tuple
    covs: tuple

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if np.any(w < 0) or abs(w.sum() - 1) > 1e-9:
            raise ValueError("mixture weights must be a distribution")
        mus = np.atleast_2d(np.asarray(self.means, dtype=float))
        covs = np.asarray(self.covs, dtype=float).reshape(len(w), mus.shape[1], mus.shape[1])
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mus)
        object.__setattr__(self, "covs", covs)

    @property
    def dim(self):
        return self.means.shape[1]

    def sample(self, rng, n):
        comp = rng.choice(self.weights.size, size=n, p=self.weights)
        z = rng.standard_normal((n, self.dim))
        L = np.linalg.cholesky(self.covs)
        return self.means[comp] + np.einsum("nij,nj->ni", L[comp], z)

    def quadrature(self) -> FinitePopulation:
        """Tensor Gauss-Hermite rule per component (dim <= 3), fixed-seed Monte Carlo above."""
        L = np.linalg.cholesky(self.covs)
        pts, wts = [], []
        for c in range(self.weights.size):
            if self.dim in _GH_NODES:
                Z, W = _gauss_hermite(self.dim, _GH_NODES[self.dim])
            else:
                Z = np.random.default_rng(12345).standard_normal((1 << 16, self.dim))
                W = np.full(Z.shape[0], 1.0 / Z.shape[0])
            pts.append(self.means[c] + Z @ L[c].T)
            wts.append(self.weights[c] * W)
        W = np.concatenate(wts)
        return FinitePopulation(np.vstack(pts), W / W.sum())

    def to_dict(self):
        return {"kind": "gaussian", "weights": self.weights.tolist(), "means": self.means.tolist(),
                "covs": self.covs.tolist()}


@dataclass(frozen=True)
class LungLikeCovariates:
    """Seven covariates: standardized age-like and log-diameter-like Gaussians, five binary flags."""
    binary_probs: tuple = (0.3, 0.2, 0.1, 0.4, 0.15)
    correlation: float = 0.3

    @property
    def dim(self):
        return 7

    def _chol(self):
        r = self.correlation
        return np.linalg.cholesky(np.array([[1.0, r], [r, 1.0]]))

    def sample(self, rng, n):
        cont = rng.standard_normal((n, 2)) @ self._chol().T
        flags = (rng.random((n, 5)) < np.asarray(self.binary_probs)).astype(float)
        return np.hstack([cont, flags])

    def quadrature(self) -> FinitePopulation:
        Z, W = _gauss_hermite(2, 24)
        Z = Z @ self._chol().T
        pb = np.asarray(self.binary_probs)
        combos = np.array(list(itertools.product([0.0, 1.0], repeat=5)))
        cw = np.prod(np.where(combos == 1.0, pb, 1.0 - pb), axis=1)
        pts = np.hstack([np.repeat(Z, len(combos), axis=0), np.tile(combos, (len(Z), 1))])
        wts = np.repeat(W, len(combos)) * np.tile(cw, len(Z))
        return FinitePopulation(pts, wts / wts.sum())

    def to_dict(self):
        return {"kind": "lung-like", "binary_probs": list(self.binary_probs), "correlation": self.correlation}


def covariates_from_dict(d: dict):
    kind = d["kind"]
    if kind == "finite":
        return FiniteCovariates(np.asarray(d["support"], dtype=float), np.asarray(d["probs"], dtype=float))
    if kind == "gaussian":
        return GaussianMixtureCovariates(tuple(d.get("weights", [1.0])), tuple(map(tuple, d["means"])),
                                         tuple(np.asarray(d["covs"], dtype=float).ravel()))
    if kind == "lung-like":
        return LungLikeCovariates(tuple(d.get("binary_probs", (0.3, 0.2, 0.1, 0.4, 0.15))),
                                  float(d.get("correlation", 0.3)))
    raise ValueError(f"unknown covariate law {kind!r}")


@dataclass(frozen=True)
class PopulationSpec:
    covariates: object
    spec: ModelSpec
    w_star: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "w_star", np.asarray(self.w_star, dtype=float))
        if self.covariates.dim != self.spec.input_dim:
            raise ValueError("covariate dimension does not match the model input dimension")
        if np.any(self.true_prevalence() <= 0):
            raise ValueError("implied true prevalence has a zero entry")

    def true_prevalence(self) -> np.ndarray:
        return exact_marginal(self.spec, self.w_star, self.covariates.quadrature())

    def probs(self, X) -> np.ndarray:
        return np.exp(log_lik_batch(self.spec, self.w_star, X))


def _categorical(rng, P):
    # inverse-CDF draw per row
    u = rng.random(P.shape[0])
    c = np.cumsum(P, axis=1)
    return np.minimum((u[:, None] >= c).sum(axis=1), P.shape[1] - 1)


def sample_true_population(pop: PopulationSpec, n: int, seed: int) -> Dataset:
    """x ~ p_X, then y ~ p(y|x, w*)."""
    rng = rng_for(seed, "data")
    d = pop.spec.input_dim
    if n == 0:
        X, y = np.zeros((0, d)), np.zeros(0, dtype=int)
    else:
        X = pop.covariates.sample(rng, n)
        y = _categorical(rng, pop.probs(X))
    return Dataset(X, y, {"generator": "true-population", "seed": seed, "n": n})


def conditional_x_given_y(pop: PopulationSpec) -> np.ndarray:
    """Exact p(x|y, w*) on a finite covariate table, shape (K, m)."""
    cov = pop.covariates
    if not isinstance(cov, FiniteCovariates):
        raise ValueError("analytic conditionals need a finite covariate table")
    J = pop.probs(cov.support) * cov.probs[:, None]
    return (J / J.sum(axis=0, keepdims=True)).T


def _design_labels(rng, design, n, K):
    if "counts" in design:
        counts = np.asarray(design["counts"], dtype=int)
        if counts.size != K or np.any(counts < 0):
            raise ValueError("design counts must be non-negative, one per label")
        if n is not None and counts.sum() != n:
            raise ValueError("design counts do not sum to n")
        return rng.permutation(np.repeat(np.arange(K), counts))
    p = as_label_dist(design["probs"], name="design distribution")
    if p.size != K:
        raise ValueError("design distribution has the wrong number of labels")
    return rng.choice(K, size=n, p=p)


def _rejection(pop, rng, k, m, budget):
    """m draws of x from p(x|y=k) by proposing x ~ p_X and accepting with prob p(k|x, w*)."""
    out, have, used = [], 0, 0
    rate = max(pop.true_prevalence()[k], 1e-6)
    while have < m:
        size = int(min(max(1024, 1.2 * (m - have) / rate), 1 << 20))
        if used + size > budget:
            size = budget - used
            if size <= 0:
                raise RuntimeError(f"rejection sampler for label {k} exceeded its budget of {budget} proposals "
                                   f"({have}/{m} accepted, acceptance rate {have / max(used, 1):.3g})")
        X = pop.covariates.sample(rng, size)
        acc = rng.random(size) < pop.probs(X)[:, k]
        used += size
        take = X[acc][:m - have]
        out.append(take)
        have += take.shape[0]
    return np.vstack(out) if out else np.zeros((0, pop.spec.input_dim))


def sample_label_biased(pop: PopulationSpec, design: dict, n: int | None, seed: int,
                        max_proposals: int | None = None) -> Dataset:
    """Labels from the design (``{"probs": p~}`` or ``{"counts": [...]}``), then x ~ p(x|y, w*)."""
    rng = rng_for(seed, "data")
    K = pop.spec.n_labels
    if n is None:
        n = int(np.sum(design["counts"]))
    y = _design_labels(rng, design, n, K)
    X = np.zeros((y.size, pop.spec.input_dim))
    budget = max(MAX_PROPOSALS, 1000 * y.size) if max_proposals is None else max_proposals
    if isinstance(pop.covariates, FiniteCovariates):
        C = conditional_x_given_y(pop)
        for k in range(K):
            idx = np.flatnonzero(y == k)
            X[idx] = pop.covariates.support[rng.choice(C.shape[1], size=idx.size, p=C[k])]
    else:
        for k in range(K):
            idx = np.flatnonzero(y == k)
            if idx.size:
                X[idx] = _rejection(pop, rng, k, idx.size, budget)
    meta = {"generator": "label-biased", "seed": seed, "n": int(y.size),
            "design": {key: list(map(float, v)) for key, v in design.items()}}
    return Dataset(X, y, meta)


def selection_probability(p_tilde, marginal) -> np.ndarray:
    """p(s=1|y) = alpha p~(y)/p(y|w) with alpha = min_y p(y|w)/p~(y)."""
    p_tilde = as_label_dist(p_tilde, strict=True, name="p_tilde")
    marginal = as_label_dist(marginal, strict=True, name="marginal")
    r = p_tilde / marginal
    return r / r.max()


def sample_via_selection(pop: PopulationSpec, p_tilde, n: int, seed: int,
                         max_proposals: int | None = None) -> Dataset:
    """Draw from the true population and keep each sample with probability p(s=1|y)."""
    rng = rng_for(seed, "data")
    acc = selection_probability(p_tilde, pop.true_prevalence())
    rate = float(pop.true_prevalence() @ acc)
    budget = max(MAX_PROPOSALS, 1000 * n) if max_proposals is None else max_proposals
    Xs, ys, have, used = [], [], 0, 0
    while have < n:
        size = int(min(max(1024, 1.2 * (n - have) / rate), 1 << 20))
        if used + size > budget:
            raise RuntimeError(f"selection sampler exceeded its budget of {budget} proposals")
        X = pop.covariates.sample(rng, size)
        y = _categorical(rng, pop.probs(X))
        keep = rng.random(size) < acc[y]
        kept = np.flatnonzero(keep)[:n - have]
        # count proposals only up to the last accepted draw
        used += size if kept.size < n - have else int(kept[-1]) + 1
        Xs.append(X[kept])
        ys.append(y[kept])
        have += kept.size
    X = np.vstack(Xs) if Xs else np.zeros((0, pop.spec.input_dim))
    y = np.concatenate(ys) if ys else np.zeros(0, dtype=int)
    meta = {"generator": "selection", "seed": seed, "n": n, "p_tilde": list(map(float, p_tilde)),
            "acceptance": acc.tolist(), "expected_acceptance_rate": rate, "proposals": used}
    return Dataset(X, y, meta)


def contingency_dataset() -> Dataset:
    """The fixed 100-sample binary covariate table: cells (x, y) with counts 47, 44, 3, 6."""
    cells = [((0.0, 0), 47), ((0.0, 1), 44), ((1.0, 0), 3), ((1.0, 1), 6)]
    X = np.concatenate([np.full(c, x) for (x, _), c in cells])[:, None]
    y = np.concatenate([np.full(c, lab) for (_, lab), c in cells]).astype(int)
    return Dataset(X, y, {"generator": "contingency"})


def standardize(X, mean=None, std=None):
    """Column-wise standardization; returns (Z, mean, std)."""
    X = np.asarray(X, dtype=float)
    mean = X.mean(axis=0) if mean is None else np.asarray(mean, dtype=float)
    std = X.std(axis=0) if std is None else np.asarray(std, dtype=float)
    std = np.where(std > 0, std, 1.0)
    return (X - mean) / std, mean, std
