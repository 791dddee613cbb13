"""Six-metric evaluation suite: accuracy, macro precision/specificity/F1,
Cohen's kappa (unweighted) and one-vs-rest macro AUC, with per-class
breakdown. Zero-denominator cases are defined as 0.0."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyConfusion, LabelOutOfRange, NoValidClass, NonFinite


@dataclass
class MetricsReport:
    confusion: np.ndarray          # rows = true, cols = predicted
    accuracy: float
    macro_precision: float
    macro_specificity: float
    kappa: float
    macro_f1: float
    macro_auc: float
    per_class: list[dict]          # precision / specificity / f1 per grade


def confusion_matrix(y_true, y_pred, num_classes: int) -> np.ndarray:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise LabelOutOfRange("y_true and y_pred lengths differ")
    out = np.zeros((num_classes, num_classes), dtype=np.int64)
    if y_true.size == 0:
        return out
    if y_true.min() < 0 or y_true.max() >= num_classes \
            or y_pred.min() < 0 or y_pred.max() >= num_classes:
        raise LabelOutOfRange(f"labels outside [0, {num_classes})")
    np.add.at(out, (y_true, y_pred), 1)
    return out


def _safe_div(num: float, den: float) -> float:
    return float(num) / float(den) if den > 0 else 0.0


def classification_metrics(confusion: np.ndarray) -> dict:
    confusion = np.asarray(confusion)
    total = int(confusion.sum())
    if total == 0:
        raise EmptyConfusion("confusion matrix has no samples")
    c = confusion.shape[0]
    per_class = []
    for k in range(c):
        tp = int(confusion[k, k])
        fp = int(confusion[:, k].sum()) - tp
        fn = int(confusion[k, :].sum()) - tp
        tn = total - tp - fp - fn
        prec = _safe_div(tp, tp + fp)
        rec = _safe_div(tp, tp + fn)
        spec = _safe_div(tn, tn + fp)
        f1 = _safe_div(2.0 * prec * rec, prec + rec)
        per_class.append({
            "precision": prec, "recall": rec, "specificity": spec, "f1": f1,
            "absent": (tp + fp + fn) == 0,
        })
    return {
        "accuracy": float(np.trace(confusion)) / total,
        "per_class": per_class,
        "macro_precision": float(np.mean([d["precision"] for d in per_class])),
        "macro_specificity": float(np.mean([d["specificity"] for d in per_class])),
        "macro_f1": float(np.mean([d["f1"] for d in per_class])),
    }


def cohen_kappa(confusion: np.ndarray) -> float:
    confusion = np.asarray(confusion, dtype=np.float64)
    total = confusion.sum()
    if total == 0:
        raise EmptyConfusion("confusion matrix has no samples")
    po = np.trace(confusion) / total
    pe = float(np.sum(confusion.sum(axis=0) * confusion.sum(axis=1))) / (total * total)
    if pe >= 1.0:
        return 0.0
    return float((po - pe) / (1.0 - pe))


def _midranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="stable")
    ranks = np.empty(len(x), dtype=np.float64)
    i = 0
    xs = x[order]
    while i < len(x):
        j = i
        while j + 1 < len(x) and xs[j + 1] == xs[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def auc_ovr(scores: np.ndarray, y_true, num_classes: int | None = None) -> float:
    """Macro one-vs-rest ROC AUC via the Mann-Whitney rank statistic with
    midrank tie handling. Classes without both positives and negatives are
    excluded from the average."""
    scores = np.asarray(scores, dtype=np.float64)
    if not np.all(np.isfinite(scores)):
        raise NonFinite("non-finite scores")
    y_true = np.asarray(y_true, dtype=np.int64)
    num_classes = num_classes or scores.shape[1]
    aucs = []
    for k in range(num_classes):
        pos = y_true == k
        n_pos = int(pos.sum())
        n_neg = len(y_true) - n_pos
        if n_pos == 0 or n_neg == 0:
            continue
        ranks = _midranks(scores[:, k])
        r_pos = ranks[pos].sum()
        auc = (r_pos - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)
        aucs.append(auc)
    if not aucs:
        raise NoValidClass("no class has both positive and negative samples")
    return float(np.mean(aucs))


def evaluate_predictions(y_true, y_pred, scores, num_classes: int) -> MetricsReport:
    confusion = confusion_matrix(y_true, y_pred, num_classes)
    base = classification_metrics(confusion)
    return MetricsReport(
        confusion=confusion,
        accuracy=base["accuracy"],
        macro_precision=base["macro_precision"],
        macro_specificity=base["macro_specificity"],
        kappa=cohen_kappa(confusion),
        macro_f1=base["macro_f1"],
        macro_auc=auc_ovr(np.asarray(scores), y_true, num_classes),
        per_class=base["per_class"],
    )


def report_to_csv(report: MetricsReport) -> str:
    """Summary row in percent (2 decimals) plus a per-grade block."""
    lines = ["acc,prec,spec,kappa,f1,auc"]
    vals = [report.accuracy, report.macro_precision, report.macro_specificity,
            report.kappa, report.macro_f1, report.macro_auc]
    lines.append(",".join(f"{100.0 * v:.2f}" for v in vals))
    lines.append("grade,prec,spec,f1")
    for k, d in enumerate(report.per_class):
        lines.append(f"{k}," + ",".join(
            f"{100.0 * d[m]:.2f}" for m in ("precision", "specificity", "f1")))
    return "\n".join(lines) + "\n"
