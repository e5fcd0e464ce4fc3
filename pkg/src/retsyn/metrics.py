"""Classification metrics: confusion matrix, one-vs-rest rates, quadratic
weighted kappa, and ROC/AUC (macro and micro)."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class MetricError(ValueError):
    pass


def confusion(true_labels, pred_labels, n_classes: int) -> np.ndarray:
    t = np.asarray(true_labels, dtype=np.int64)
    p = np.asarray(pred_labels, dtype=np.int64)
    if t.shape != p.shape:
        raise MetricError(f"label shapes differ: {t.shape} vs {p.shape}")
    if len(t) and (t.min() < 0 or t.max() >= n_classes or p.min() < 0 or p.max() >= n_classes):
        raise MetricError(f"labels outside 0..{n_classes - 1}")
    out = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(out, (t, p), 1)
    return out


def basic_metrics(O: np.ndarray) -> dict:
    """Accuracy plus per-class one-vs-rest sensitivity/specificity/precision/F1
    and their unweighted macro averages. Zero-denominator cells report 0 and
    are listed under `undefined`."""
    O = np.asarray(O, dtype=np.float64)
    n = O.shape[0]
    total = O.sum()
    if total == 0:
        raise MetricError("empty confusion matrix")
    undefined = []

    def ratio(num, den, name):
        if den == 0:
            undefined.append(name)
            return 0.0
        return num / den

    per_class = []
    for c in range(n):
        tp = O[c, c]
        fn = O[c].sum() - tp
        fp = O[:, c].sum() - tp
        tn = total - tp - fn - fp
        sens = ratio(tp, tp + fn, f"sensitivity[{c}]")
        spec = ratio(tn, tn + fp, f"specificity[{c}]")
        prec = ratio(tp, tp + fp, f"precision[{c}]")
        f1 = ratio(2 * prec * sens, prec + sens, f"f1[{c}]")
        per_class.append(
            {"sensitivity": sens, "specificity": spec, "precision": prec, "f1": f1,
             "tp": tp, "fp": fp, "tn": tn, "fn": fn}
        )
    macro = {
        key: float(np.mean([pc[key] for pc in per_class]))
        for key in ("sensitivity", "specificity", "precision", "f1")
    }
    return {
        "accuracy": float(np.trace(O) / total),
        "per_class": per_class,
        "macro": macro,
        "undefined": undefined,
    }


def qwk(O: np.ndarray) -> float:
    """Quadratic weighted Cohen's kappa with disagreement weights
    (i-j)^2/(N-1)^2 and the chance-expected matrix from the marginals."""
    O = np.asarray(O, dtype=np.float64)
    n = O.shape[0]
    total = O.sum()
    if total == 0:
        raise MetricError("empty confusion matrix")
    idx = np.arange(n)
    w = (idx[:, None] - idx[None, :]) ** 2 / max((n - 1) ** 2, 1)
    E = np.outer(O.sum(axis=1), O.sum(axis=0)) / total
    num = (w * O).sum()
    den = (w * E).sum()
    if den == 0:
        # all mass concentrated on one class: agreement is perfect iff the
        # observed disagreement is zero too
        return 1.0 if num == 0 else 0.0
    return float(1.0 - num / den)


def roc_curve_binary(truth: np.ndarray, scores: np.ndarray):
    """Threshold sweep over the observed scores; returns (fpr, tpr) arrays
    starting at (0,0) and ending at (1,1). Ties share a threshold step."""
    truth = np.asarray(truth, dtype=bool)
    scores = np.asarray(scores, dtype=np.float64)
    n_pos = int(truth.sum())
    n_neg = len(truth) - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    order = np.argsort(-scores, kind="stable")
    s_sorted = scores[order]
    t_sorted = truth[order]
    tps = np.cumsum(t_sorted)
    fps = np.cumsum(~t_sorted)
    distinct = np.nonzero(np.diff(s_sorted))[0]
    cut = np.r_[distinct, len(s_sorted) - 1]
    tpr = np.r_[0.0, tps[cut] / n_pos]
    fpr = np.r_[0.0, fps[cut] / n_neg]
    return fpr, tpr


def _trapezoid(fpr, tpr) -> float:
    return float(np.trapezoid(tpr, fpr))


def roc_auc(true_labels, probabilities) -> dict:
    """One-vs-rest ROC per class; macro = mean per-class AUC over defined
    classes, micro = pooled over all (item, class) decisions."""
    t = np.asarray(true_labels, dtype=np.int64)
    p = np.asarray(probabilities, dtype=np.float64)
    if p.ndim != 2 or len(t) != len(p):
        raise MetricError("probabilities must be (n_items, n_classes)")
    n, k = p.shape
    per_class, curves, skipped = {}, {}, []
    for c in range(k):
        rc = roc_curve_binary(t == c, p[:, c])
        if rc is None:
            skipped.append(c)
            continue
        curves[c] = rc
        per_class[c] = _trapezoid(*rc)
    onehot = np.zeros_like(p, dtype=bool)
    onehot[np.arange(n), t] = True
    micro_curve = roc_curve_binary(onehot.ravel(), p.ravel())
    return {
        "per_class": per_class,
        "macro": float(np.mean(list(per_class.values()))) if per_class else float("nan"),
        "micro": _trapezoid(*micro_curve) if micro_curve else float("nan"),
        "curves": curves,
        "micro_curve": micro_curve,
        "undefined_classes": skipped,
    }


@dataclass
class MetricReport:
    accuracy: float
    qwk: float
    sensitivity: float
    specificity: float
    precision: float
    f1: float
    auc_roc: float
    auc_roc_micro: float
    confusion: np.ndarray
    per_class: list = field(default_factory=list)
    undefined: list = field(default_factory=list)

    TABLE_COLUMNS = ("Accuracy", "QWK", "Sensitivity", "Specificity", "Precision",
                     "F1-score", "AUC-ROC")

    def table_row(self) -> list[float]:
        return [self.accuracy, self.qwk, self.sensitivity, self.specificity,
                self.precision, self.f1, self.auc_roc]

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "qwk": self.qwk,
            "sensitivity": self.sensitivity,
            "specificity": self.specificity,
            "precision": self.precision,
            "f1": self.f1,
            "auc_roc": self.auc_roc,
            "auc_roc_micro": self.auc_roc_micro,
            "confusion": self.confusion.tolist(),
            "per_class": self.per_class,
            "undefined": self.undefined,
        }


def full_report(true_labels, pred_labels, probabilities, n_classes: int) -> MetricReport:
    O = confusion(true_labels, pred_labels, n_classes)
    basics = basic_metrics(O)
    auc = roc_auc(true_labels, probabilities)
    return MetricReport(
        accuracy=basics["accuracy"],
        qwk=qwk(O),
        sensitivity=basics["macro"]["sensitivity"],
        specificity=basics["macro"]["specificity"],
        precision=basics["macro"]["precision"],
        f1=basics["macro"]["f1"],
        auc_roc=auc["macro"],
        auc_roc_micro=auc["micro"],
        confusion=O,
        per_class=basics["per_class"],
        undefined=basics["undefined"],
    )
