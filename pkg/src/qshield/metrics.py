"""Evaluation metrics: per-class precision/recall, FPR, confusion matrix.

One code path serves both the CNN and the TF-IDF baseline, so metric
definitions cannot drift between models. Malicious samples are the positive
class for FPR: any benign sample predicted as an attack counts as a false
alarm.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .labels import BENIGN_INDEX, CLASSES, label_index


@dataclass
class MetricsReport:
    """Per-class precision/recall plus FPR; the comparison-table shape."""

    labels: tuple[str, ...]
    confusion: np.ndarray  # rows: true class, cols: predicted class
    precision: dict[str, float]
    recall: dict[str, float]
    degenerate_precision: dict[str, bool]  # true where no sample was predicted as the class
    degenerate_recall: dict[str, bool]  # true where the class had no samples
    fpr: float
    fpr_degenerate: bool
    accuracy: float
    total: int

    def to_dict(self) -> dict:
        return {
            "labels": list(self.labels),
            "confusion": self.confusion.astype(int).tolist(),
            "per_class": {
                label: {
                    "precision": self.precision[label],
                    "recall": self.recall[label],
                    "support": int(self.confusion[i].sum()),
                    "degenerate_precision": self.degenerate_precision[label],
                    "degenerate_recall": self.degenerate_recall[label],
                }
                for i, label in enumerate(self.labels)
            },
            "fpr": self.fpr,
            "fpr_degenerate": self.fpr_degenerate,
            "accuracy": self.accuracy,
            "total": self.total,
        }

    def to_table(self) -> str:
        """Aligned text table: one row per class, recall and precision columns."""
        rows = [f"{'class':<10}{'recall':>10}{'precision':>12}{'support':>10}"]
        for i, label in enumerate(self.labels):
            support = int(self.confusion[i].sum())
            flag = " *" if self.degenerate_precision[label] else ""
            rows.append(
                f"{label:<10}{self.recall[label] * 100:>9.2f}%{self.precision[label] * 100:>11.2f}%"
                f"{support:>10}{flag}"
            )
        rows.append(
            f"{'overall':<10}{'':>10}{'':>12}{self.total:>10}   "
            f"accuracy {self.accuracy * 100:.2f}%   FPR {self.fpr * 100:.2f}%"
        )
        if any(self.degenerate_precision.values()):
            rows.append("* precision reported as 1.0 because no sample was predicted as this class")
        return "\n".join(rows)


def confusion_matrix(true_idx, pred_idx, num_classes: int) -> np.ndarray:
    mat = np.zeros((num_classes, num_classes), dtype=np.int64)
    for t, p in zip(true_idx, pred_idx):
        mat[t, p] += 1
    return mat


def report_from_confusion(confusion: np.ndarray, labels: tuple[str, ...] = CLASSES) -> MetricsReport:
    """Derive every metric from a confusion matrix (rows true, cols predicted)."""
    confusion = np.asarray(confusion, dtype=np.int64)
    C = len(labels)
    if confusion.shape != (C, C):
        raise ValueError(f"confusion matrix shape {confusion.shape} != ({C}, {C})")
    precision = {}
    recall = {}
    degenerate_p = {}
    degenerate_r = {}
    for i, label in enumerate(labels):
        tp = int(confusion[i, i])
        predicted = int(confusion[:, i].sum())
        actual = int(confusion[i, :].sum())
        degenerate_p[label] = predicted == 0
        degenerate_r[label] = actual == 0
        precision[label] = 1.0 if predicted == 0 else tp / predicted
        recall[label] = 1.0 if actual == 0 else tp / actual
    benign_total = int(confusion[BENIGN_INDEX, :].sum())
    fpr_degenerate = benign_total == 0
    false_alarms = int(confusion[BENIGN_INDEX, :].sum() - confusion[BENIGN_INDEX, BENIGN_INDEX])
    fpr = 0.0 if fpr_degenerate else false_alarms / benign_total
    total = int(confusion.sum())
    accuracy = float(np.trace(confusion)) / total if total else 0.0
    return MetricsReport(
        labels=tuple(labels),
        confusion=confusion,
        precision=precision,
        recall=recall,
        degenerate_precision=degenerate_p,
        degenerate_recall=degenerate_r,
        fpr=fpr,
        fpr_degenerate=fpr_degenerate,
        accuracy=accuracy,
        total=total,
    )


def evaluate(corpus, classify_fn, labels: tuple[str, ...] = CLASSES) -> MetricsReport:
    """Score a classifier over labeled samples.

    classify_fn maps a raw text string to a predicted label name. The corpus
    must be nonempty and fully labeled within `labels`.
    """
    if not corpus:
        raise ValueError("cannot evaluate an empty corpus")
    true_idx = [label_index(s.label) for s in corpus]
    pred_idx = []
    for s in corpus:
        pred = classify_fn(s.text)
        pred_idx.append(label_index(pred) if isinstance(pred, str) else int(pred))
    return report_from_confusion(confusion_matrix(true_idx, pred_idx, len(labels)), labels)


def evaluate_model(params, corpus) -> MetricsReport:
    """Eval-mode CNN predictions over a labeled corpus."""
    from .model import predict

    return evaluate(corpus, lambda text: predict(params, text).predicted_class)
