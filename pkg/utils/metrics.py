"""
Classification metrics in percent: overall accuracy, macro precision and
macro one-vs-rest AUC (rank statistic, ties counted half).

The one-vs-rest score of class k is column k of the logits as given, so every
metric is invariant under strictly monotone transforms of the score columns.
"""
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from utils.errors import DatasetError

logger = logging.getLogger(__name__)


@dataclass
class MetricsReport:
    oa: float
    precision: float
    auc: float
    confusion: np.ndarray
    per_class_precision: list[float] = field(default_factory=list)
    per_class_auc: list[float | None] = field(default_factory=list)
    unpredicted_classes: list[int] = field(default_factory=list)
    auc_excluded_classes: list[int] = field(default_factory=list)

    def as_row(self) -> dict:
        return {"OA": self.oa, "Pre": self.precision, "AUC": self.auc}

    def as_text(self, class_names: list[str] | None = None) -> str:
        n_classes = self.confusion.shape[0]
        names = class_names or [str(k) for k in range(n_classes)]
        lines = [f"OA  {self.oa:6.2f}", f"Pre {self.precision:6.2f}", f"AUC {self.auc:6.2f}", "",
                 f"{'class':>8}  {'Pre':>6}  {'AUC':>6}"]
        for k in range(n_classes):
            auc = self.per_class_auc[k]
            auc_text = f"{auc:6.2f}" if auc is not None else f"{'-':>6}"
            lines.append(f"{names[k]:>8}  {self.per_class_precision[k]:6.2f}  {auc_text}")
        lines += ["", "confusion (rows: true, columns: predicted)"]
        lines += ["  ".join(f"{count:6d}" for count in row) for row in self.confusion]
        return "\n".join(lines)


def confusion_matrix(predictions: np.ndarray, labels: np.ndarray, num_classes: int) -> np.ndarray:
    matrix = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(matrix, (np.asarray(labels, dtype=np.int64), np.asarray(predictions, dtype=np.int64)), 1)
    return matrix


def binary_auc(scores: np.ndarray, positive: np.ndarray) -> float | None:
    """Mann-Whitney U / (n_pos * n_neg); None when one of the two groups is empty."""
    positive = np.asarray(positive, dtype=bool)
    n_pos, n_neg = int(positive.sum()), int((~positive).sum())
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(scores)
    u_statistic = ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u_statistic / (n_pos * n_neg))


def compute_metrics(logits, labels) -> MetricsReport:
    scores = np.asarray(getattr(logits, "data", logits), dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.ndim != 2 or scores.shape[0] < 1 or labels.shape != (scores.shape[0],):
        raise DatasetError(f"compute_metrics: need B x K scores with B >= 1 and B labels, "
                           f"got {scores.shape} and {labels.shape}")
    n_classes = scores.shape[1]
    if labels.min() < 0 or labels.max() >= n_classes:
        raise DatasetError(f"compute_metrics: labels must lie in [0, {n_classes})")

    predictions = scores.argmax(axis=1)
    confusion = confusion_matrix(predictions, labels, n_classes)
    oa = 100.0 * np.trace(confusion) / confusion.sum()

    per_class_precision, unpredicted = [], []
    for k in range(n_classes):
        predicted_k = confusion[:, k].sum()
        if predicted_k == 0:
            unpredicted.append(k)
            per_class_precision.append(0.0)
        else:
            per_class_precision.append(100.0 * confusion[k, k] / predicted_k)
    if unpredicted:
        logger.warning(f"precision: no predictions for class(es) {unpredicted}, scored 0")

    per_class_auc, excluded = [], []
    for k in range(n_classes):
        auc = binary_auc(scores[:, k], labels == k)
        if auc is None:
            excluded.append(k)
            per_class_auc.append(None)
        else:
            per_class_auc.append(100.0 * auc)
    if excluded:
        logger.warning(f"AUC: class(es) {excluded} lack positives or negatives, excluded from the macro average")
    defined = [auc for auc in per_class_auc if auc is not None]
    macro_auc = float(np.mean(defined)) if defined else float("nan")

    return MetricsReport(float(oa), float(np.mean(per_class_precision)), macro_auc, confusion,
                         per_class_precision, per_class_auc, unpredicted, excluded)
