"""Classification metrics, calibration, and selective-prediction analysis.

Everything here operates on plain numpy arrays of predictions, labels,
probability scores, confidences, and uncertainty values. Macro averages
skip degenerate classes (no test support, or no predictions for precision)
and report them in ``EvalReport.excluded``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ConfusionMatrix",
    "EvalReport",
    "confusion",
    "macro_metrics",
    "ovr_auc",
    "ece",
    "risk_coverage",
    "confidence_split",
    "build_report",
]

ECE_BINS = 15
COVERAGES = tuple(c / 100 for c in range(100, 0, -10))


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # [K,K], rows = true class, cols = predicted
    n: int

    def tp(self, k: int) -> int:
        return int(self.counts[k, k])

    def fp(self, k: int) -> int:
        return int(self.counts[:, k].sum() - self.counts[k, k])

    def fn(self, k: int) -> int:
        return int(self.counts[k, :].sum() - self.counts[k, k])

    def tn(self, k: int) -> int:
        return self.n - self.tp(k) - self.fp(k) - self.fn(k)


@dataclass
class EvalReport:
    oa: float
    precision: float
    sensitivity: float
    specificity: float
    f1: float
    auc: float
    ece: float
    confusion: ConfusionMatrix
    risk_coverage: list[tuple[float, float, float]]  # (coverage, selective acc, mean risk)
    confidence_split: dict[str, float]
    per_class: list[dict[str, float]] = field(default_factory=list)
    excluded: list[int] = field(default_factory=list)


def confusion(preds, labels, num_classes: int) -> ConfusionMatrix:
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if preds.shape != labels.shape or preds.ndim != 1 or preds.size == 0:
        raise ValueError(f"preds/labels must be equal-length nonempty vectors, got {preds.shape} vs {labels.shape}")
    if np.any(preds < 0) or np.any(preds >= num_classes) or np.any(labels < 0) or np.any(labels >= num_classes):
        raise ValueError(f"class indices out of range [0, {num_classes})")
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(counts, (labels, preds), 1)
    return ConfusionMatrix(counts=counts, n=int(preds.size))


def macro_metrics(cm: ConfusionMatrix) -> tuple[float, float, float, float, float]:
    """(OA, macro precision, sensitivity, specificity, F1).

    Classes without test support are skipped from sensitivity/specificity/F1;
    classes never predicted are skipped from precision. F1 with P+Se == 0 is 0.
    """
    K = cm.counts.shape[0]
    oa = float(np.trace(cm.counts)) / cm.n
    precs, sens, specs, f1s = [], [], [], []
    for k in range(K):
        tp, fp, fn, tn = cm.tp(k), cm.fp(k), cm.fn(k), cm.tn(k)
        has_support = tp + fn > 0
        has_preds = tp + fp > 0
        if has_preds:
            precs.append(tp / (tp + fp))
        if has_support:
            se = tp / (tp + fn)
            sens.append(se)
            specs.append(tn / (tn + fp) if tn + fp > 0 else 0.0)
            if has_preds:
                p = tp / (tp + fp)
                f1s.append(2 * p * se / (p + se) if p + se > 0 else 0.0)
            else:
                f1s.append(0.0)
    mean = lambda xs: float(np.mean(xs)) if xs else 0.0
    return oa, mean(precs), mean(sens), mean(specs), mean(f1s)


def _midranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="stable")
    ranks = np.empty(x.size, dtype=np.float64)
    sx = x[order]
    i = 0
    while i < x.size:
        j = i
        while j + 1 < x.size and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def ovr_auc(scores, labels) -> tuple[float, list[int]]:
    """Macro one-vs-rest AUC via the midrank Mann-Whitney statistic.

    Returns (macro AUC over contributing classes, excluded class list).
    Classes lacking a positive or a negative sample are excluded.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.ndim != 2 or scores.shape[0] != labels.size:
        raise ValueError(f"scores must be [N,K] matching labels, got {scores.shape}")
    if np.any(np.abs(scores.sum(axis=1) - 1.0) > 1e-4):
        raise ValueError("score rows must lie on the probability simplex (within 1e-4)")
    aucs, excluded = [], []
    for k in range(scores.shape[1]):
        pos = labels == k
        n_pos, n_neg = int(pos.sum()), int((~pos).sum())
        if n_pos == 0 or n_neg == 0:
            excluded.append(k)
            continue
        ranks = _midranks(scores[:, k])
        u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
        aucs.append(u / (n_pos * n_neg))
    return (float(np.mean(aucs)) if aucs else 0.0), excluded


def ece(confidences, correct, bins: int = ECE_BINS) -> float:
    """Expected calibration error over equal-width confidence bins."""
    conf = np.asarray(confidences, dtype=np.float64)
    corr = np.asarray(correct, dtype=np.float64)
    if np.any(conf < 0) or np.any(conf > 1):
        raise ValueError("confidences must lie in [0,1]")
    n = conf.size
    idx = np.minimum((conf * bins).astype(np.int64), bins - 1)
    total = 0.0
    for b in range(bins):
        mask = idx == b
        nb = int(mask.sum())
        if nb == 0:
            continue
        total += (nb / n) * abs(corr[mask].mean() - conf[mask].mean())
    return float(total)


def risk_coverage(uncertainties, correct) -> list[tuple[float, float, float]]:
    """Selective accuracy at retained coverages 100%, 90%, ..., 10%.

    Samples are kept in ascending uncertainty (ties broken by original
    index); each row is (coverage, selective accuracy, mean risk).
    """
    unc = np.asarray(uncertainties, dtype=np.float64)
    corr = np.asarray(correct, dtype=np.float64)
    if unc.shape != corr.shape:
        raise ValueError("uncertainties and correct flags must have equal length")
    order = np.argsort(unc, kind="stable")
    sorted_corr = corr[order]
    n = unc.size
    rows = []
    for cov in COVERAGES:
        keep = max(1, int(round(cov * n)))
        acc = float(sorted_corr[:keep].mean())
        rows.append((cov, acc, 1.0 - acc))
    return rows


def _quartiles(x: np.ndarray) -> tuple[float, float, float]:
    q1, med, q3 = np.percentile(x, [25, 50, 75])
    return float(q1), float(med), float(q3)


def confidence_split(confidences, correct) -> dict[str, float]:
    """Order statistics of confidence for correct vs incorrect predictions."""
    conf = np.asarray(confidences, dtype=np.float64)
    corr = np.asarray(correct, dtype=bool)
    out: dict[str, float] = {"complete": float(corr.any() and (~corr).any())}
    if corr.any():
        q1, med, q3 = _quartiles(conf[corr])
        out.update(correct_q1=q1, correct_median=med, correct_q3=q3)
    if (~corr).any():
        q1, med, q3 = _quartiles(conf[~corr])
        out.update(incorrect_q1=q1, incorrect_median=med, incorrect_q3=q3)
    if corr.any() and (~corr).any():
        out["gap"] = out["correct_median"] - out["incorrect_median"]
    return out


def build_report(preds, labels, scores, confidences, uncertainties, num_classes: int) -> EvalReport:
    """Assemble the full evaluation report from per-sample predictions."""
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    cm = confusion(preds, labels, num_classes)
    oa, prec, sens, spec, f1 = macro_metrics(cm)
    auc, excluded = ovr_auc(scores, labels)
    correct = preds == labels
    per_class = []
    for k in range(num_classes):
        tp, fp, fn = cm.tp(k), cm.fp(k), cm.fn(k)
        per_class.append({
            "class": k,
            "support": tp + fn,
            "precision": tp / (tp + fp) if tp + fp > 0 else float("nan"),
            "sensitivity": tp / (tp + fn) if tp + fn > 0 else float("nan"),
        })
    return EvalReport(
        oa=oa, precision=prec, sensitivity=sens, specificity=spec, f1=f1,
        auc=auc, ece=ece(confidences, correct),
        confusion=cm,
        risk_coverage=risk_coverage(uncertainties, correct),
        confidence_split=confidence_split(confidences, correct),
        per_class=per_class, excluded=excluded,
    )
