"""Exact grid posterior for models with at most three parameters."""
from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import write_json
from .marginal import FinitePopulation, as_label_dist, population_from_labelled
from .models import ModelSpec, eta_to_params, log_lik_many, param_count

CHUNK = 4096


@dataclass(frozen=True)
class GridSpec:
    lo: tuple = (-10.0,)
    hi: tuple = (10.0,)
    points: tuple = (401,)

    def axes(self, dim: int) -> list:
        def pick(t, i):
            return t[i] if len(t) > 1 else t[0]
        out = []
        for i in range(dim):
            lo, hi, n = float(pick(self.lo, i)), float(pick(self.hi, i)), int(pick(self.points, i))
            if n < 3 or not lo < hi:
                raise ValueError(f"grid axis {i}: need lo < hi and at least 3 points")
            out.append(np.linspace(lo, hi, n))
        return out


@dataclass(frozen=True)
class GridPrior:
    """Independent prior per grid coordinate: normal(0, scale^2), flat, or student-t(nu, scale)."""
    kind: str = "normal"
    scale: float = 10.0
    nu: float = 1.0

    def __post_init__(self):
        if self.kind not in ("normal", "flat", "student-t"):
            raise ValueError(f"unknown prior kind {self.kind!r}")
        if self.scale <= 0 or self.nu <= 0:
            raise ValueError("prior scale and nu must be positive")

    def log_density(self, Z):
        if self.kind == "flat":
            return np.zeros(Z.shape[0])
        u = Z / self.scale
        if self.kind == "normal":
            return (-0.5 * u * u - np.log(self.scale * np.sqrt(2 * np.pi))).sum(axis=1)
        return (-0.5 * (self.nu + 1) * np.log1p(u * u / self.nu)).sum(axis=1)


@dataclass
class GridPosterior:
    axes: list
    log_density: np.ndarray        # shape (n_1, ..., n_P), normalized
    log_cell_weight: np.ndarray    # trapezoid weights, same shape
    coords: str                    # "params" or "eta"
    spec: ModelSpec
    population: FinitePopulation | None = None
    meta: dict = field(default_factory=dict)

    def points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def params(self) -> np.ndarray:
        Z = self.points()
        return eta_to_params(Z[:, 0], Z[:, 1]) if self.coords == "eta" else Z

    def mass(self) -> np.ndarray:
        return np.exp(self.log_density + self.log_cell_weight).ravel()

    def total_log_mass(self) -> float:
        return float(_logsumexp(self.log_density + self.log_cell_weight))


def _logsumexp(a):
    a = np.asarray(a).ravel()
    m = a.max()
    return m + np.log(np.exp(a - m).sum())


def _trapezoid_log_weights(axes):
    ws = []
    for ax in axes:
        h = ax[1] - ax[0]
        w = np.full(ax.size, h)
        w[0] = w[-1] = 0.5 * h
        ws.append(w)
    W = ws[0]
    for w in ws[1:]:
        W = np.multiply.outer(W, w)
    return np.log(W)


def n_threads() -> int:
    try:
        return max(1, int(os.environ.get("PREVCORR_THREADS", "1")))
    except ValueError:
        return 1


def log_marginal_many(spec, Wm, population: FinitePopulation) -> np.ndarray:
    """log p(y|w_m) for a stack of parameter vectors, shape (m, K)."""
    L = log_lik_many(spec, Wm, population.support)
    with np.errstate(divide="ignore"):
        lp = np.log(population.probs)
    A = L + lp[None, :, None]
    mx = A.max(axis=1)
    return mx + np.log(np.exp(A - mx[:, None, :]).sum(axis=1))


def grid_log_posterior(spec: ModelSpec, X, y, loss_kind: str = "ig", prior: GridPrior = GridPrior(),
                       p_Y=None, N_pr: float = 0.0, grid: GridSpec = GridSpec(), coords: str = "params",
                       population: FinitePopulation | None = None, p_hat_Y=None,
                       threads: int | None = None) -> GridPosterior:
    """Unnormalized log-posterior on a grid, then trapezoid-normalized.

    bias-free: log p(w) + sum_n log p(y_n|x_n, w)
    ig:        adds -sum_n log p(y_n|w) and N_pr sum_y p_hat_Y(y) log p(y|w)
    iw:        log p(w) + sum_n beta(y_n) log p(y_n|x_n, w), beta = N/N_y p_Y(y)

    ``coords='eta'`` grids the two cell logits of a logistic-binary model on a
    binary covariate; the map to (slope, bias) has unit Jacobian.
    """
    P = param_count(spec)
    if P > 3:
        raise ValueError(f"grid posterior supports at most 3 parameters, model has {P}")
    if loss_kind not in ("bias-free", "ig", "iw"):
        raise ValueError(f"unknown loss kind {loss_kind!r}")
    if coords == "eta" and not (spec.kind == "logistic-binary" and spec.input_dim == 1):
        raise ValueError("eta coordinates need a logistic-binary model on one covariate")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=int)
    K = spec.n_labels
    counts_y = np.bincount(y, minlength=K)
    if loss_kind in ("ig", "iw"):
        if p_Y is None:
            raise ValueError(f"{loss_kind} posterior needs a true prevalence")
        p_Y = as_label_dist(p_Y, name="true prevalence")
    if loss_kind == "ig" and population is None:
        population = population_from_labelled(X, y, p_Y)
    if N_pr > 0 and loss_kind != "ig":
        raise ValueError("the prevalence prior applies to the ig posterior only")
    p_hat_Y = p_Y if p_hat_Y is None else np.asarray(p_hat_Y, dtype=float)

    # merge duplicate (x, y) pairs
    XY = np.hstack([X, y[:, None].astype(float)])
    uniq, mult = np.unique(XY, axis=0, return_counts=True)
    Xu, yu = uniq[:, :-1], uniq[:, -1].astype(int)
    coef = mult.astype(float)
    if loss_kind == "iw":
        with np.errstate(divide="ignore", invalid="ignore"):
            beta = np.where(counts_y > 0, y.size / np.maximum(counts_y, 1) * p_Y, 0.0)
        coef = coef * beta[yu]
    marg_coef = -counts_y.astype(float)
    if N_pr > 0:
        marg_coef = marg_coef + N_pr * p_hat_Y

    axes = grid.axes(P)
    mesh = np.meshgrid(*axes, indexing="ij")
    Z = np.stack([m.ravel() for m in mesh], axis=1)
    log_prior = prior.log_density(Z)
    if not np.all(np.isfinite(log_prior)):
        raise ValueError("prior density is not finite on the grid")
    Wm = eta_to_params(Z[:, 0], Z[:, 1]) if coords == "eta" else Z

    def chunk(s):
        Wc = Wm[s:s + CHUNK]
        L = log_lik_many(spec, Wc, Xu)[:, np.arange(yu.size), yu]
        val = L @ coef
        if loss_kind == "ig":
            val = val + log_marginal_many(spec, Wc, population) @ marg_coef
        return val

    starts = range(0, Wm.shape[0], CHUNK)
    nt = n_threads() if threads is None else threads
    if nt > 1:
        with ThreadPoolExecutor(max_workers=nt) as ex:
            parts = list(ex.map(chunk, starts))
    else:
        parts = [chunk(s) for s in starts]
    lp = (np.concatenate(parts) + log_prior).reshape(mesh[0].shape)
    if not np.all(np.isfinite(lp)):
        raise ValueError("non-finite log-posterior values on the grid")
    lw = _trapezoid_log_weights(axes)
    lp = lp - _logsumexp(lp + lw)
    return GridPosterior(axes, lp, lw, coords, spec, population,
                         {"loss_kind": loss_kind, "N_pr": N_pr, "prior": prior.kind})


def _functional_values(post: GridPosterior, functional, index=0):
    Z = post.points()
    if functional == "log_or":
        if post.coords == "eta":
            return Z[:, 1] - Z[:, 0]
        if post.spec.kind == "logistic-binary" and post.spec.input_dim == 1:
            return Z[:, 0]
        raise ValueError("log_or is defined for the binary-covariate logistic model")
    if functional == "coordinate":
        return Z[:, index]
    c = np.asarray(functional, dtype=float)
    return Z @ c


def weighted_quantiles(values, weights, qs):
    order = np.argsort(values, kind="stable")
    v, w = values[order], weights[order]
    cw = np.cumsum(w) - 0.5 * w
    cw /= w.sum()
    return np.interp(qs, cw, v)


def posterior_functional_stats(post: GridPosterior, functional="log_or", index: int = 0,
                               quantiles=(0.025, 0.5, 0.975)) -> dict:
    """Mean, sd and quantiles of a functional under the grid density.

    ``functional`` is 'log_or', 'coordinate' (with ``index``) or a coefficient vector.
    """
    v = _functional_values(post, functional, index)
    m = post.mass()
    m = m / m.sum()
    mean = float(m @ v)
    sd = float(np.sqrt(max(m @ (v - mean) ** 2, 0.0)))
    return {"mean": mean, "sd": sd, "quantiles": dict(zip([float(q) for q in quantiles],
                                                          weighted_quantiles(v, m, quantiles).tolist()))}


def grid_predictive_posterior(post: GridPosterior, x_star, rule: str = "population",
                              p_tilde=None) -> np.ndarray:
    """Integrate p(y|x*, w) (or its selection-conditioned form) against the grid density."""
    x_star = np.atleast_2d(np.asarray(x_star, dtype=float))
    Wm = post.params()
    m = post.mass()
    m = m / m.sum()
    L = log_lik_many(post.spec, Wm, x_star)[:, 0, :]
    if rule == "population":
        Q = np.exp(L)
    elif rule == "selection":
        if post.population is None:
            raise ValueError("selection rule needs the population used for exact marginals")
        pt = as_label_dist(p_tilde, strict=True, name="p_tilde")
        A = L - log_marginal_many(post.spec, Wm, post.population) + np.log(pt)
        A = A - A.max(axis=1, keepdims=True)
        Q = np.exp(A)
        Q /= Q.sum(axis=1, keepdims=True)
    else:
        raise ValueError(f"unknown rule {rule!r}")
    out = m @ Q
    return out / out.sum()


def export_grid_csv(path, post: GridPosterior) -> None:
    Z = post.points()
    names = ["eta0", "eta1"] if post.coords == "eta" else [f"w{i}" for i in range(Z.shape[1])]
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(names + ["log_density"])
        for z, v in zip(Z, post.log_density.ravel()):
            wr.writerow([repr(float(c)) for c in z] + [repr(float(v))])


def grid_summary(post: GridPosterior) -> dict:
    P = len(post.axes)
    out = {"coords": post.coords, "axes": [{"lo": float(a[0]), "hi": float(a[-1]), "points": int(a.size)}
                                           for a in post.axes],
           "meta": post.meta, "total_mass": float(np.exp(post.total_log_mass())),
           "coordinates": [posterior_functional_stats(post, "coordinate", i) for i in range(P)]}
    try:
        out["log_or"] = posterior_functional_stats(post, "log_or")
    except ValueError:
        pass
    return out


def export_grid_summary(path, post: GridPosterior) -> None:
    write_json(path, grid_summary(post))
