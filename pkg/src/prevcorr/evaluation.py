"""Checkpoint-level prediction and evaluation shared by the library and the CLI."""
from __future__ import annotations

import csv

import numpy as np

from .data import Dataset
from .marginal import WeightPolicy, beta_weights
from .metrics import (confusion, holdout_ll, holdout_risk, im_curve, nell_true_population, one_off_accuracy,
                      roc_auc, summary_stats)
from .models import log_lik_batch
from .prediction import (decide_batch, heuristic_alpha0, predict_population, predict_selection_known,
                         vbi_unknown_prevalence, zero_one_loss)
from .training import Checkpoint

TABLE_KEYS = ("NELL", "NLL_HO", "Rsk_HO", "Acc", "TNR", "TPR", "NPV", "PPV", "AUC", "I", "M", "MCC")


def predict_dataset(ckpt: Checkpoint, X, rule: str = "population", test_prevalence=None,
                    unknown: bool = False, alpha0_k: float = 1.0, E=None):
    """Apply a test-time rule to every row of X.

    Returns (Q, actions, meta) where meta holds the rule description and, for
    the unknown-prevalence rule, the Dirichlet state.
    """
    spec = ckpt.spec
    L = log_lik_batch(spec, ckpt.w, X)
    K = spec.n_labels
    E = zero_one_loss(K) if E is None else np.asarray(E, dtype=float)
    meta = {"rule": rule}
    if rule == "population":
        Q = predict_population(L)
    elif rule == "selection":
        logm = ckpt.marginal_log()
        if unknown:
            alpha0 = heuristic_alpha0(np.exp(logm) / np.exp(logm).sum(), alpha0_k)
            state, Q = vbi_unknown_prevalence(L, logm, alpha0)
            meta.update(unknown=True, alpha0=alpha0.tolist(), alpha0_k=alpha0_k, state=state)
        else:
            if test_prevalence is None:
                raise ValueError("selection rule needs --test-prevalence or --unknown")
            Q = predict_selection_known(L, logm, test_prevalence)
            meta["test_prevalence"] = list(map(float, test_prevalence))
    else:
        raise ValueError(f"unknown rule {rule!r}")
    return Q, decide_batch(Q, E), meta


def evaluate(ckpt: Checkpoint, ds: Dataset, true_prevalence=None, rule: str = "selection",
             test_prevalence=None):
    """Full metric report on a hold-out set and the ROC/IM curve.

    NELL uses beta weights from the true prevalence against the hold-out label
    frequencies. NLL_HO is the hold-out risk -mean log q(y_n) under the
    evaluation rule (by default selection at the hold-out frequencies);
    Rsk_HO is minus the average information gain.
    """
    spec = ckpt.spec
    K = spec.n_labels
    y = ds.y
    if y.size == 0:
        raise ValueError("empty evaluation set")
    L = log_lik_batch(spec, ckpt.w, ds.X)
    counts = np.bincount(y, minlength=K)
    p_ho = counts / y.size
    if true_prevalence is None:
        true_prevalence = ckpt.loss.true_prevalence if ckpt.loss.true_prevalence is not None else p_ho
    p_Y = np.asarray(true_prevalence, dtype=float)
    try:
        logm = ckpt.marginal_log()
    except ValueError:
        logm = None
    f_true = L[np.arange(y.size), y]

    nell = nell_true_population(f_true, y, beta_weights(WeightPolicy("empirical"), p_Y, y)) \
        if np.all(counts > 0) else None
    # a hold-out set missing a class gives no usable default test prevalence
    if rule == "selection" and logm is not None and (test_prevalence is not None or np.all(counts > 0)):
        pt = p_ho if test_prevalence is None else np.asarray(test_prevalence, dtype=float)
        Q = predict_selection_known(L, logm, pt)
    else:
        rule = "population"
        Q = predict_population(L)
    pred = decide_batch(Q, zero_one_loss(K))
    stats = summary_stats(confusion(pred, y, K))
    nan = float("nan")
    report = {
        "NELL": nell.value if nell else nan,
        "NELL_std": nell.std if nell else nan,
        "NELL_corrected": nell.corrected if nell else nan,
        "NLL_HO": holdout_risk(Q, y),
        "Rsk_HO": -holdout_ll(f_true, logm[y]) if logm is not None else nan,
        "Acc": stats["accuracy"],
        "BA": stats["balanced_accuracy"],
        "I": stats["I"], "M": stats["M"], "MCC": stats["MCC"],
        "TR": stats["TR"].tolist(), "PV": stats["PV"].tolist(),
        "rule": rule, "true_prevalence": p_Y.tolist(), "holdout_prevalence": p_ho.tolist(),
        "n": int(y.size),
    }
    curve = []
    if K == 2:
        report.update(TNR=stats["TNR"], TPR=stats["TPR"], NPV=stats["NPV"], PPV=stats["PPV"])
        if np.all(counts > 0):
            roc, auc = roc_auc(Q[:, 1], y)
            report["AUC"] = auc
            curve = im_curve(roc, float(p_Y[1]))
        else:
            report["AUC"] = nan
    else:
        for k in ("TNR", "TPR", "NPV", "PPV", "AUC"):
            report[k] = nan
        report["OOA"] = one_off_accuracy(pred, y)
    return report, curve


def write_curves_csv(path, curve) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["threshold", "FPR", "TPR", "I", "M"])
        for c in curve:
            wr.writerow([repr(float(v)) for v in (c.threshold, c.FPR, c.TPR, c.I, c.M)])


def write_predictions_csv(path, Q, actions, meta) -> None:
    K = Q.shape[1]
    desc = meta["rule"] + ("-unknown" if meta.get("unknown") else "")
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow([f"p{k}" for k in range(K)] + ["action", "rule"])
        for q, a in zip(Q, actions):
            wr.writerow([repr(float(v)) for v in q] + [int(a), desc])
