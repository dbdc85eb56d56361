"""Confusion-matrix metrics: accuracy, macro Jaccard, macro F1, mean per-class accuracy."""

from __future__ import annotations

import numpy as np


class MetricError(ValueError):
    pass


class ConfusionMatrix:
    """``counts[true, pred]``. Mergeable with ``+``."""

    def __init__(self, n_classes: int, counts=None):
        if n_classes < 1:
            raise ValueError("n_classes must be >= 1")
        self.n_classes = n_classes
        if counts is None:
            self.counts = np.zeros((n_classes, n_classes), dtype=np.int64)
        else:
            self.counts = np.array(counts, dtype=np.int64)
            if self.counts.shape != (n_classes, n_classes) or np.any(self.counts < 0):
                raise ValueError("counts must be a non-negative C x C matrix")

    @classmethod
    def from_labels(cls, true, pred, n_classes: int) -> "ConfusionMatrix":
        return cls(n_classes).accumulate(true, pred)

    def accumulate(self, true, pred) -> "ConfusionMatrix":
        true = np.atleast_1d(np.asarray(true, dtype=np.int64))
        pred = np.atleast_1d(np.asarray(pred, dtype=np.int64))
        if true.shape != pred.shape:
            raise ValueError(f"{true.size} labels vs {pred.size} predictions")
        C = self.n_classes
        if np.any((true < 0) | (true >= C) | (pred < 0) | (pred >= C)):
            raise ValueError(f"class index outside [0, {C})")
        np.add.at(self.counts, (true, pred), 1)
        return self

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.n_classes != self.n_classes:
            raise ValueError("cannot merge confusion matrices of different size")
        return ConfusionMatrix(self.n_classes, self.counts + other.counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def per_class(self):
        """``(tp, fp, fn, support)`` arrays."""
        tp = np.diag(self.counts)
        fp = self.counts.sum(axis=0) - tp
        fn = self.counts.sum(axis=1) - tp
        return tp, fp, fn, self.counts.sum(axis=1)


def accuracy(cm: ConfusionMatrix) -> float:
    if cm.total == 0:
        raise MetricError("accuracy of an empty confusion matrix")
    return float(np.trace(cm.counts) / cm.total)


def _macro(num, den, exclude_empty):
    keep = den > 0
    if not np.any(keep):
        raise MetricError("every class is empty")
    if exclude_empty:
        return float(np.mean(num[keep] / den[keep]))
    # empty classes count as 0
    return float(np.mean(np.where(keep, num / np.where(keep, den, 1), 0.0)))


def per_class_jaccard(cm: ConfusionMatrix) -> np.ndarray:
    tp, fp, fn, _ = cm.per_class()
    den = tp + fp + fn
    return np.where(den > 0, tp / np.where(den > 0, den, 1), np.nan)


def per_class_f1(cm: ConfusionMatrix) -> np.ndarray:
    tp, fp, fn, _ = cm.per_class()
    den = 2 * tp + fp + fn
    return np.where(den > 0, 2 * tp / np.where(den > 0, den, 1), np.nan)


def per_class_recall(cm: ConfusionMatrix) -> np.ndarray:
    tp, _, _, support = cm.per_class()
    return np.where(support > 0, tp / np.where(support > 0, support, 1), np.nan)


def macro_jaccard(cm: ConfusionMatrix, exclude_empty: bool = True) -> float:
    """Unweighted mean of TP / (TP + FP + FN) over classes.

    Classes that never occur in either truth or prediction are left out of
    the mean unless ``exclude_empty`` is false, in which case they count 0.
    """
    tp, fp, fn, _ = cm.per_class()
    return _macro(tp, tp + fp + fn, exclude_empty)


def macro_f1(cm: ConfusionMatrix, exclude_empty: bool = True) -> float:
    tp, fp, fn, _ = cm.per_class()
    return _macro(2 * tp, 2 * tp + fp + fn, exclude_empty)


def mean_per_class_accuracy(cm: ConfusionMatrix, exclude_empty: bool = True) -> float:
    tp, _, _, support = cm.per_class()
    return _macro(tp, support, exclude_empty)


def report(cm: ConfusionMatrix, class_names=None) -> str:
    """Plain-text report: the four summary metrics, per-class rows, raw counts."""
    C = cm.n_classes
    names = list(class_names) if class_names is not None else [str(c) for c in range(C)]
    tp, fp, fn, support = cm.per_class()
    jac, f1, rec = per_class_jaccard(cm), per_class_f1(cm), per_class_recall(cm)
    lines = [
        f"items\t{cm.total}",
        f"accuracy\t{accuracy(cm):.6f}",
        f"macro_jaccard\t{macro_jaccard(cm):.6f}",
        f"macro_f1\t{macro_f1(cm):.6f}",
        f"mean_per_class_accuracy\t{mean_per_class_accuracy(cm):.6f}",
        "",
        "class\tsupport\ttp\tfp\tfn\trecall\tjaccard\tf1",
    ]
    for c in range(C):
        lines.append(
            f"{names[c]}\t{support[c]}\t{tp[c]}\t{fp[c]}\t{fn[c]}\t{rec[c]:.6f}\t{jac[c]:.6f}\t{f1[c]:.6f}"
        )
    lines += ["", "confusion (rows = true, cols = predicted)", "\t" + "\t".join(names)]
    for c in range(C):
        lines.append(names[c] + "\t" + "\t".join(str(v) for v in cm.counts[c]))
    return "\n".join(lines) + "\n"


def parse_report(text: str) -> dict:
    """Summary metrics of a :func:`report` back as floats."""
    out = {}
    for line in text.splitlines():
        parts = line.split("\t")
        if len(parts) == 2 and parts[0] in ("accuracy", "macro_jaccard", "macro_f1", "mean_per_class_accuracy", "items"):
            out[parts[0]] = float(parts[1])
    return out
