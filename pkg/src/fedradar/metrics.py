"""Classification metrics and cross-domain evaluation.

The positive class is the harmful-overlap hypothesis (label 1)
everywhere. Recall of the positive class is the probability of
detection that the regulator puts a floor under; recall of class 0 is
reported alongside it because a detector that cries wolf is also
useless.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass

import numpy as np

from .dataset import frames_to_arrays
from .model import PartitionedModel

__all__ = [
    "ConfusionMatrix",
    "UndefinedMetricError",
    "EvalReport",
    "CrossDomainMatrix",
    "recall",
    "recall_h0",
    "accuracy",
    "confusion_from_predictions",
    "pooled_confusion",
    "evaluate_arrays",
    "evaluate_model",
    "cross_domain_eval",
    "compare_paradigms",
    "comparison_to_csv",
]


class UndefinedMetricError(ValueError):
    pass


@dataclass(frozen=True)
class ConfusionMatrix:
    """Binary confusion counts; positive class = harmful overlap."""

    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def recall(cm: ConfusionMatrix) -> float:
    """Probability of detection: tp / (tp + fn)."""
    if cm.tp + cm.fn == 0:
        raise UndefinedMetricError("recall undefined: no positive samples (tp + fn == 0)")
    return cm.tp / (cm.tp + cm.fn)


def recall_h0(cm: ConfusionMatrix) -> float:
    """Recall of the no-overlap class: tn / (tn + fp)."""
    if cm.tn + cm.fp == 0:
        raise UndefinedMetricError("class-0 recall undefined: no negative samples")
    return cm.tn / (cm.tn + cm.fp)


def accuracy(cm: ConfusionMatrix) -> float:
    if cm.total == 0:
        raise UndefinedMetricError("accuracy undefined on an empty matrix")
    return (cm.tp + cm.tn) / cm.total


def confusion_from_predictions(y_true: np.ndarray, y_pred: np.ndarray) -> ConfusionMatrix:
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if y_true.shape != y_pred.shape:
        raise ValueError("prediction/label shapes differ")
    return ConfusionMatrix(
        tp=int(np.sum((y_true == 1) & (y_pred == 1))),
        fp=int(np.sum((y_true == 0) & (y_pred == 1))),
        tn=int(np.sum((y_true == 0) & (y_pred == 0))),
        fn=int(np.sum((y_true == 1) & (y_pred == 0))),
    )


def pooled_confusion(cms) -> ConfusionMatrix:
    """Sum confusion matrices (micro pooling across clients)."""
    return ConfusionMatrix(
        tp=sum(c.tp for c in cms),
        fp=sum(c.fp for c in cms),
        tn=sum(c.tn for c in cms),
        fn=sum(c.fn for c in cms),
    )


@dataclass
class EvalReport:
    confusion: ConfusionMatrix
    accuracy: float
    recall_h1: float
    recall_h0: float


def evaluate_arrays(model: PartitionedModel, x: np.ndarray, y: np.ndarray,
                    batch_size: int = 256) -> EvalReport:
    """Argmax evaluation of stacked images against integer labels."""
    if x.shape[0] == 0:
        raise ValueError("nothing to evaluate")
    logits = model.predict_logits(x, batch_size=batch_size)
    preds = np.argmax(logits, axis=1)
    cm = confusion_from_predictions(y, preds)
    return EvalReport(
        confusion=cm,
        accuracy=accuracy(cm),
        recall_h1=recall(cm) if cm.tp + cm.fn else float("nan"),
        recall_h0=recall_h0(cm) if cm.tn + cm.fp else float("nan"),
    )


def evaluate_model(model: PartitionedModel, frames, batch_size: int = 256) -> EvalReport:
    """Evaluate on a list of frames; deterministic for fixed inputs."""
    x, y = frames_to_arrays(frames)
    return evaluate_arrays(model, x, y, batch_size=batch_size)


@dataclass
class CrossDomainMatrix:
    """K x K grid: row = test client, column = training client."""

    esc_ids: list[int]
    accuracy: np.ndarray  # [K, K]
    recall_h1: np.ndarray  # [K, K]

    def diagonal_mean(self) -> float:
        return float(np.mean(np.diag(self.accuracy)))

    def off_diagonal_mean(self) -> float:
        k = self.accuracy.shape[0]
        mask = ~np.eye(k, dtype=bool)
        return float(np.mean(self.accuracy[mask]))

    def to_rows(self) -> list[dict]:
        rows = []
        for i, test_id in enumerate(self.esc_ids):
            row = {"test_esc": test_id}
            for j, train_id in enumerate(self.esc_ids):
                row[f"acc_trained_on_esc{train_id}"] = self.accuracy[i, j]
                row[f"recall_h1_trained_on_esc{train_id}"] = self.recall_h1[i, j]
            rows.append(row)
        return rows


def cross_domain_eval(local_models: dict[int, PartitionedModel], clients) -> CrossDomainMatrix:
    """Evaluate every locally trained model on every client's test shard."""
    if len(clients) < 2:
        raise ValueError("cross-domain evaluation needs at least 2 clients")
    esc_ids = [c.esc_id for c in clients]
    k = len(esc_ids)
    acc = np.zeros((k, k))
    rec = np.zeros((k, k))
    tests = {c.esc_id: frames_to_arrays(c.test) for c in clients}
    for i, test_id in enumerate(esc_ids):
        x, y = tests[test_id]
        for j, train_id in enumerate(esc_ids):
            report = evaluate_arrays(local_models[train_id], x, y)
            acc[i, j] = report.accuracy
            rec[i, j] = report.recall_h1
    return CrossDomainMatrix(esc_ids=esc_ids, accuracy=acc, recall_h1=rec)


def compare_paradigms(summaries: list[dict]) -> list[dict]:
    """Merge per-paradigm run summaries into a deterministic table.

    Each summary is the dict written by the training driver (paradigm,
    final per-client metrics, byte totals). Rows come back sorted by
    paradigm name.
    """
    rows = []
    for s in summaries:
        final = s["final"]
        row = {
            "paradigm": s["paradigm"],
            "rounds_run": s["rounds_run"],
            "reached_target": s["reached_target"],
            "final_global_recall_h1": final["global_val_recall_h1"],
            "worst_client_recall_h1": min(final["per_client_recall_h1"]),
            "worst_client_recall_h0": min(final["per_client_recall_h0"]),
            "mean_client_accuracy": float(np.mean(final["per_client_val_accuracy"])),
            "total_uplink_bytes": s["totals"]["uplink_bytes"],
            "total_downlink_bytes": s["totals"]["downlink_bytes"],
            "shares_raw_data": s["paradigm"] == "centralized",
        }
        for i, a in enumerate(final["per_client_val_accuracy"]):
            row[f"acc_esc{i}"] = a
        for i, r in enumerate(final["per_client_recall_h0"]):
            row[f"recall_h0_esc{i}"] = r
        for i, r in enumerate(final["per_client_recall_h1"]):
            row[f"recall_h1_esc{i}"] = r
        rows.append(row)
    rows.sort(key=lambda r: r["paradigm"])
    return rows


def comparison_to_csv(rows: list[dict]) -> str:
    """Render the comparison table as CSV with stable float formatting."""
    if not rows:
        return ""
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0].keys()), lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: _fmt(v) for k, v in row.items()})
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, float):
        return format(v, ".12g")
    if isinstance(v, (bool, int, str)):
        return v
    return json.dumps(v)
