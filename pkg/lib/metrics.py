import csv
import logging
from typing import Dict, List, Optional, Sequence

import numpy as np
import yaml
from sklearn.metrics import (
    accuracy_score,
    confusion_matrix,
    f1_score,
    precision_score,
    recall_score,
    roc_auc_score,
)

from .exceptions import MetricsError

logger = logging.getLogger("Metrics")

METRIC_NAMES = [
    "accuracy",
    "precision",
    "recall",
    "f1_macro",
    "auc",
    "precision_macro",
    "recall_macro",
]
COUNT_NAMES = ["tp", "fp", "fn", "tn"]


class EvalReport:
    """Classification metrics at one threshold.

    precision and recall are for the positive class; the _macro variants
    average both classes. A zero denominator reports 0 and sets the
    matching *_undefined flag.
    """

    def __init__(
        self,
        accuracy,
        precision,
        recall,
        f1_macro,
        auc,
        precision_macro,
        recall_macro,
        tp,
        fp,
        fn,
        tn,
        threshold=0.5,
        precision_undefined=False,
        recall_undefined=False,
    ):
        self.accuracy = accuracy
        self.precision = precision
        self.recall = recall
        self.f1_macro = f1_macro
        self.auc = auc
        self.precision_macro = precision_macro
        self.recall_macro = recall_macro
        self.tp = tp
        self.fp = fp
        self.fn = fn
        self.tn = tn
        self.threshold = threshold
        self.precision_undefined = precision_undefined
        self.recall_undefined = recall_undefined

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def __eq__(self, other):
        return isinstance(other, EvalReport) and self.to_dict() == other.to_dict()

    def to_dict(self) -> dict:
        values = {name: float(getattr(self, name)) for name in METRIC_NAMES}
        values.update({name: int(getattr(self, name)) for name in COUNT_NAMES})
        values["threshold"] = float(self.threshold)
        values["precision_undefined"] = bool(self.precision_undefined)
        values["recall_undefined"] = bool(self.recall_undefined)
        return values

    def to_row(self) -> dict:
        """Flat CSV row: metrics then confusion counts"""
        row = {name: float(getattr(self, name)) for name in METRIC_NAMES}
        row.update({name: int(getattr(self, name)) for name in COUNT_NAMES})
        return row


def compute_metrics(probabilities, labels, threshold: float = 0.5) -> EvalReport:
    probabilities = np.asarray(probabilities, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1).astype(bool)
    if len(probabilities) != len(labels):
        raise MetricsError(
            str(len(probabilities)) + " probabilities for " + str(len(labels)) + " labels"
        )
    if len(labels) == 0:
        raise MetricsError("No predictions to evaluate")
    if not np.all(np.isfinite(probabilities)):
        raise MetricsError("Probabilities must be finite")
    if labels.all() or not labels.any():
        raise MetricsError("AUC is undefined when every label belongs to one class")

    predicted = probabilities >= threshold
    tn, fp, fn, tp = confusion_matrix(labels, predicted, labels=[False, True]).ravel()
    return EvalReport(
        accuracy=float(accuracy_score(labels, predicted)),
        precision=float(precision_score(labels, predicted, zero_division=0)),
        recall=float(recall_score(labels, predicted, zero_division=0)),
        f1_macro=float(f1_score(labels, predicted, average="macro", zero_division=0)),
        auc=float(roc_auc_score(labels, probabilities)),
        precision_macro=float(
            precision_score(labels, predicted, average="macro", zero_division=0)
        ),
        recall_macro=float(recall_score(labels, predicted, average="macro", zero_division=0)),
        tp=int(tp),
        fp=int(fp),
        fn=int(fn),
        tn=int(tn),
        threshold=threshold,
        precision_undefined=bool(tp + fp == 0),
        recall_undefined=bool(tp + fn == 0),
    )


def report_from_dict(values: dict) -> EvalReport:
    return EvalReport(**values)


def write_report(report: EvalReport, report_path, extra: Optional[dict] = None):
    values = dict(extra or {})
    values["metrics"] = report.to_dict()
    with open(report_path, "w") as report_file:
        yaml.safe_dump(values, report_file, sort_keys=True)


def load_report(report_path) -> EvalReport:
    with open(report_path, "r") as report_file:
        values = yaml.safe_load(report_file)
    return report_from_dict(values["metrics"])


def aggregate_reports(reports: Sequence[EvalReport]) -> Dict[str, float]:
    """Mean and population standard deviation of every metric"""
    if not reports:
        raise MetricsError("No reports to aggregate")
    row = {"runs": len(reports)}
    for name in METRIC_NAMES:
        values = np.array([getattr(report, name) for report in reports], dtype=np.float64)
        row[name + "_mean"] = float(values.mean())
        row[name + "_std"] = float(values.std())
    return row


def write_rows(rows: List[dict], csv_path):
    if not rows:
        raise MetricsError("No rows to write to " + str(csv_path))
    fieldnames = list(rows[0].keys())
    with open(csv_path, "w", newline="") as csv_file:
        writer = csv.DictWriter(csv_file, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    logger.info("Wrote " + str(len(rows)) + " rows to " + str(csv_path))
