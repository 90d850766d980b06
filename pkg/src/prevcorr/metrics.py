"""Prevalence-aware evaluation metrics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def confusion(predicted, true, n_labels: int) -> np.ndarray:
    """Counts[t, p] of true label t predicted as p."""
    predicted = np.asarray(predicted, dtype=int)
    true = np.asarray(true, dtype=int)
    if predicted.shape != true.shape:
        raise ValueError("predicted and true labels have different lengths")
    for a in (predicted, true):
        if a.size and (a.min() < 0 or a.max() >= n_labels):
            raise ValueError("label out of range")
    cm = np.zeros((n_labels, n_labels), dtype=np.int64)
    np.add.at(cm, (true, predicted), 1)
    return cm


def summary_stats(cm) -> dict:
    """Accuracy, per-class rates TR_y and predictive values PV_y, I, M, MCC.

    I = sum TR_y - 1 and M = sum PV_y - 1 (for more than two labels this is the
    multiclass extension, which is no longer prevalence independent).
    MCC = sign(I) sqrt(I M). Undefined rates are NaN.
    """
    cm = np.asarray(cm, dtype=float)
    total = cm.sum()
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1] or total <= 0:
        raise ValueError("confusion matrix must be square and non-empty")
    diag = np.diag(cm)
    rows, cols = cm.sum(axis=1), cm.sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        TR = np.where(rows > 0, diag / rows, np.nan)
        PV = np.where(cols > 0, diag / cols, np.nan)
    I = float(TR.sum() - 1.0)
    M = float(PV.sum() - 1.0)
    out = {"accuracy": float(diag.sum() / total), "TR": TR, "PV": PV, "I": I, "M": M,
           "MCC": mcc_from_im(I, M), "balanced_accuracy": float(np.mean(TR))}
    if cm.shape[0] == 2:
        out.update(TNR=float(TR[0]), TPR=float(TR[1]), NPV=float(PV[0]), PPV=float(PV[1]))
    return out


def mcc_from_im(I, M) -> float:
    if not (np.isfinite(I) and np.isfinite(M)):
        return float("nan")
    prod = I * M
    if prod < 0:
        return float("nan")
    return float(np.sign(I) * np.sqrt(prod)) if I != 0 else 0.0


def informedness_markedness(TNR, TPR, NPV, PPV):
    I = TNR + TPR - 1.0
    M = NPV + PPV - 1.0
    return I, M, mcc_from_im(I, M)


@dataclass
class CurvePoint:
    threshold: float
    TPR: float
    FPR: float
    I: float = float("nan")
    M: float = float("nan")


def roc_auc(scores, labels):
    """ROC curve with thresholds at every unique score (predict positive if score >= t) and AUC.

    The trapezoid AUC equals the Mann-Whitney statistic with ties counted 1/2.
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=int)
    P, N = int((labels == 1).sum()), int((labels == 0).sum())
    if P == 0 or N == 0 or P + N != labels.size:
        raise ValueError("roc_auc needs binary labels with both classes present")
    uniq = np.unique(scores)[::-1]
    thr = np.concatenate([[np.inf], uniq])
    # counts of scores >= t for each threshold
    s_pos, s_neg = np.sort(scores[labels == 1]), np.sort(scores[labels == 0])
    tp = P - np.searchsorted(s_pos, thr, side="left")
    fp = N - np.searchsorted(s_neg, thr, side="left")
    tpr, fpr = tp / P, fp / N
    curve = [CurvePoint(float(t), float(a), float(b), float(a - b)) for t, a, b in zip(thr, tpr, fpr)]
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
    return curve, auc


def im_curve(curve, prevalence: float):
    """Fill informedness and markedness for each ROC point at true prevalence pi."""
    pi = float(prevalence)
    if not 0.0 < pi < 1.0:
        raise ValueError("prevalence must lie in (0, 1)")
    out = []
    for c in curve:
        a, b = pi * c.TPR, (1 - pi) * c.FPR
        n1, n0 = (1 - pi) * (1 - c.FPR), pi * (1 - c.TPR)
        ppv = a / (a + b) if a + b > 0 else float("nan")
        npv = n1 / (n1 + n0) if n1 + n0 > 0 else float("nan")
        out.append(CurvePoint(c.threshold, c.TPR, c.FPR, c.TPR - c.FPR, ppv + npv - 1.0))
    return out


@dataclass
class RiskReport:
    value: float
    std: float
    corrected: float


def nell_true_population(loglik_true, labels, beta, k: float = 2.0) -> RiskReport:
    """Negative expected log-likelihood for the true population from beta-weighted hold-out data.

    std is the sample standard deviation of the weighted terms over sqrt(n);
    corrected = value + k * std.
    """
    terms = -np.asarray(beta, dtype=float) * np.asarray(loglik_true, dtype=float)
    n = terms.size
    if n == 0:
        raise ValueError("empty evaluation set")
    value = float(terms.mean())
    std = float(terms.std(ddof=1) / np.sqrt(n)) if n > 1 else float("nan")
    return RiskReport(value, std, value + k * std)


def holdout_risk(Q, labels) -> float:
    """-mean_n log q_n(y_n) for predictions q under the evaluation rule."""
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    labels = np.asarray(labels, dtype=int)
    with np.errstate(divide="ignore"):
        return float(-np.mean(np.log(Q[np.arange(labels.size), labels])))


def holdout_ll(loglik_true, log_marginal_true) -> float:
    """Average information gain mean_n [log p(y_n|x_n, w) - log p(y_n|w)]."""
    return float(np.mean(np.asarray(loglik_true, dtype=float) - np.asarray(log_marginal_true, dtype=float)))


@dataclass
class CalibrationBin:
    lo: float
    hi: float
    expected: float
    observed: float
    count: int
    weight: float


@dataclass
class CalibrationReport:
    bins: list
    overall_expected: float
    overall_observed: float


def calibration_report(probs, labels, weights=None, bins: int = 10, scale: str = "log",
                       floor: float = 1e-12) -> CalibrationReport:
    """Reliability bins for the predicted probability of the positive class.

    Bins are equal-width in log-probability (``scale='log'``) between the
    smallest prediction and 1, or equal-width on [0, 1] (``scale='linear'``).
    expected = weighted mean prediction, observed = weighted positive frequency.
    """
    p = np.asarray(probs, dtype=float)
    t = np.asarray(labels, dtype=float)
    if p.size == 0:
        raise ValueError("empty input")
    if bins < 2:
        raise ValueError("need at least 2 bins")
    w = np.ones_like(p) if weights is None else np.asarray(weights, dtype=float)
    if scale == "log":
        lp = np.log(np.clip(p, floor, 1.0))
        lo = min(lp.min(), np.log(0.5)) if lp.min() == 0.0 else lp.min()
        edges = np.linspace(lo, 0.0, bins + 1)
        v = lp
    elif scale == "linear":
        edges = np.linspace(0.0, 1.0, bins + 1)
        v = p
    else:
        raise ValueError(f"unknown scale {scale!r}")
    idx = np.clip(np.searchsorted(edges, v, side="right") - 1, 0, bins - 1)
    out = []
    for b in range(bins):
        m = idx == b
        if not m.any():
            continue
        wb = w[m].sum()
        lo_e, hi_e = (np.exp(edges[b]), np.exp(edges[b + 1])) if scale == "log" else (edges[b], edges[b + 1])
        out.append(CalibrationBin(float(lo_e), float(hi_e), float(w[m] @ p[m] / wb),
                                  float(w[m] @ t[m] / wb), int(m.sum()), float(wb)))
    return CalibrationReport(out, float(w @ p / w.sum()), float(w @ t / w.sum()))


def expected_fp_fn(probs, thresholds) -> dict:
    """Expected FP/FN counts and rates when predicting positive for p >= theta."""
    p = np.asarray(probs, dtype=float)
    th = np.atleast_1d(np.asarray(thresholds, dtype=float))
    above = p[None, :] >= th[:, None]
    efp = np.where(above, 1.0 - p, 0.0).sum(axis=1)
    efn = np.where(~above, p, 0.0).sum(axis=1)
    n0, n1 = (1.0 - p).sum(), p.sum()
    with np.errstate(divide="ignore", invalid="ignore"):
        return {"threshold": th, "E_FP": efp, "E_FN": efn, "FPR": efp / n0, "FNR": efn / n1}


def empirical_fp_fn(probs, labels, thresholds) -> dict:
    p = np.asarray(probs, dtype=float)
    t = np.asarray(labels, dtype=int)
    th = np.atleast_1d(np.asarray(thresholds, dtype=float))
    above = p[None, :] >= th[:, None]
    return {"threshold": th, "FP": (above & (t == 0)).sum(axis=1), "FN": (~above & (t == 1)).sum(axis=1)}


def conditional_variances(g, labels, n_labels: int) -> np.ndarray:
    """Unbiased per-class sample variance of a per-sample quantity g."""
    g = np.asarray(g, dtype=float)
    labels = np.asarray(labels, dtype=int)
    v = np.empty(n_labels)
    for k in range(n_labels):
        gk = g[labels == k]
        if gk.size < 2:
            raise ValueError(f"label {k} needs at least 2 samples for a variance estimate")
        v[k] = gk.var(ddof=1)
    return v


def estimator_variance_g2(v_hat, p_Y, counts) -> float:
    """Variance of the fixed-count weighted estimator sum_y p_Y(y) mean_{n: y_n=y} g_n.

    Equals sum_y p_Y(y)^2 v_y / n_B(y); with n_B(y) = n_B p~(y) this is
    (1/n_B) sum_y p~(y) Var[g p_Y(y)/p~(y) | y].
    """
    v_hat = np.asarray(v_hat, dtype=float)
    p_Y = np.asarray(p_Y, dtype=float)
    counts = np.asarray(counts, dtype=float)
    return float(np.sum(p_Y ** 2 * v_hat / counts))


def one_off_accuracy(predicted, true) -> float:
    return float(np.mean(np.abs(np.asarray(predicted, dtype=int) - np.asarray(true, dtype=int)) <= 1))


def curve_rows(curve):
    return [(c.threshold, c.FPR, c.TPR, c.I, c.M) for c in curve]
