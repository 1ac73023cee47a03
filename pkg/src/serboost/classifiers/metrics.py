"""Classification metrics with macro averaging over the classes present in the test set."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class MetricsReport:
    classes: tuple
    accuracy: float
    macro_recall: float
    macro_precision: float
    macro_f1: float
    counts: np.ndarray                      # unnormalized confusion, rows = true class
    per_class: dict = field(default_factory=dict)
    notes: tuple[str, ...] = ()

    @property
    def confusion(self) -> np.ndarray:
        """Row-normalized confusion; rows of absent classes stay zero."""
        totals = self.counts.sum(axis=1, keepdims=True)
        return np.divide(self.counts, totals, out=np.zeros(self.counts.shape), where=totals > 0)

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "macro_recall": self.macro_recall,
            "macro_precision": self.macro_precision,
            "macro_f1": self.macro_f1,
            "classes": [str(c) for c in self.classes],
            "confusion": self.confusion.tolist(),
            "confusion_counts": self.counts.astype(int).tolist(),
            "per_class": self.per_class,
            "notes": list(self.notes),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def classification_report(y_true, y_pred, classes=None) -> MetricsReport:
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if len(y_true) == 0:
        raise ValueError("cannot evaluate an empty test set")
    if classes is None:
        classes = tuple(np.unique(np.concatenate([y_true, y_pred])).tolist())
    index = {c: i for i, c in enumerate(classes)}
    t = np.array([index[v] for v in y_true.tolist()])
    p = np.array([index[v] for v in y_pred.tolist()])
    e = len(classes)
    counts = np.zeros((e, e), dtype=np.int64)
    np.add.at(counts, (t, p), 1)
    support = counts.sum(axis=1)
    predicted = counts.sum(axis=0)
    tp = np.diag(counts)
    present = support > 0
    recall = np.divide(tp, support, out=np.zeros(e), where=support > 0)
    precision = np.divide(tp, predicted, out=np.zeros(e), where=predicted > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros(e), where=denom > 0)
    notes = tuple(f"class {classes[i]!s} absent from test labels; excluded from macro averages"
                  for i in np.flatnonzero(~present))
    per_class = {
        str(classes[i]): {"precision": float(precision[i]), "recall": float(recall[i]),
                          "f1": float(f1[i]), "support": int(support[i])}
        for i in range(e)
    }
    return MetricsReport(
        classes=tuple(classes),
        accuracy=float(tp.sum() / counts.sum()),
        macro_recall=float(recall[present].mean()),
        macro_precision=float(precision[present].mean()),
        macro_f1=float(f1[present].mean()),
        counts=counts,
        per_class=per_class,
        notes=notes,
    )


def evaluate(model, x_test, y_test) -> MetricsReport:
    """Predict ``x_test`` and score against ``y_test`` over the model's class list."""
    pred = model.predict(x_test)
    classes = tuple(model.classes)
    extra = sorted(set(np.asarray(y_test).tolist()) - set(classes))
    return classification_report(y_test, pred, classes + tuple(extra))
