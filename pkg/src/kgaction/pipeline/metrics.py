"""Scoring, class-averaged metrics, and evaluation reports."""

from __future__ import annotations

import csv
import enum
import io
import logging
from dataclasses import dataclass, field

import numpy as np

from ..errors import DimensionError, ValidationError
from ..numerics import as_dense, matmul

log = logging.getLogger(__name__)


class MetricKind(enum.Enum):
    MEAN_CLASS_ACCURACY = "accuracy"
    MAP = "map"


@dataclass
class EvaluationReport:
    metric: MetricKind
    per_class: dict
    config_fingerprint: str = ""
    warnings: list = field(default_factory=list)

    @property
    def overall(self) -> float:
        if not self.per_class:
            return float("nan")
        return float(np.mean(list(self.per_class.values())))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["class", "score"])
        for name, score in self.per_class.items():
            w.writerow([name, repr(float(score))])
        w.writerow(["OVERALL", repr(self.overall)])
        return buf.getvalue()

    def to_table(self) -> str:
        width = max([len("OVERALL")] + [len(str(c)) for c in self.per_class])
        title = "mean class accuracy" if self.metric is MetricKind.MEAN_CLASS_ACCURACY else "mean average precision"
        lines = [title, "-" * (width + 10)]
        lines += [f"{str(c):<{width}}  {100 * s:7.2f}" for c, s in self.per_class.items()]
        lines += ["-" * (width + 10), f"{'OVERALL':<{width}}  {100 * self.overall:7.2f}"]
        for w in self.warnings:
            lines.append(f"warning: {w}")
        return "\n".join(lines) + "\n"


def predict(features, w_test) -> np.ndarray:
    """Score matrix ``features @ w_test.T``."""
    f = as_dense(features, "features")
    w = as_dense(w_test, "test classifier")
    if f.shape[1] != w.shape[1]:
        raise DimensionError(f"feature dim {f.shape[1]} != classifier dim {w.shape[1]}")
    return matmul(f, np.ascontiguousarray(w.T))


def argmax_labels(scores) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. the lowest class index on ties
    return np.argmax(np.asarray(scores), axis=1)


def mean_class_accuracy(predictions, labels, classes=None) -> EvaluationReport:
    """Per-class accuracy averaged uniformly over classes.

    ``classes`` fixes the class list and order; every listed class must have
    at least one sample.  By default the classes present in ``labels`` are
    used, in order of first appearance.
    """
    predictions = list(predictions)
    labels = list(labels)
    if len(predictions) != len(labels):
        raise DimensionError(f"{len(predictions)} predictions for {len(labels)} labels")
    if classes is None:
        classes = list(dict.fromkeys(labels))
    correct = dict.fromkeys(classes, 0)
    total = dict.fromkeys(classes, 0)
    for p, y in zip(predictions, labels):
        if y not in total:
            raise ValidationError(f"label {y!r} is not among the evaluated classes")
        total[y] += 1
        correct[y] += p == y
    empty = [c for c in classes if total[c] == 0]
    if empty:
        raise ValidationError(f"classes with zero samples: {empty}")
    per = {c: correct[c] / total[c] for c in classes}
    return EvaluationReport(MetricKind.MEAN_CLASS_ACCURACY, per)


def average_precision(scores, positives) -> float:
    """AP over samples ranked by descending score, ties in sample order."""
    s = np.asarray(scores, dtype=np.float64)
    pos = np.asarray(positives, dtype=bool)
    order = np.argsort(-s, kind="stable")
    hits = 0
    total = 0.0
    for rank, i in enumerate(order, 1):
        if pos[i]:
            hits += 1
            total += hits / rank
    if hits == 0:
        raise ValidationError("average precision needs at least one positive")
    return total / hits


def mean_average_precision(scores, multilabels, classes=None) -> EvaluationReport:
    """Class-averaged AP.

    ``multilabels`` is an ``N x C`` 0/1 matrix aligned with ``scores``.
    Classes with no positive sample are left out and noted in the report.
    """
    s = as_dense(scores, "scores")
    y = np.asarray(multilabels).astype(bool)
    if y.shape != s.shape:
        raise DimensionError(f"scores {s.shape} and labels {y.shape} differ in shape")
    classes = list(range(s.shape[1])) if classes is None else list(classes)
    if len(classes) != s.shape[1]:
        raise DimensionError(f"{len(classes)} class names for {s.shape[1]} score columns")
    per, warnings = {}, []
    for j, c in enumerate(classes):
        if not y[:, j].any():
            msg = f"class {c!r} has no positive samples and is excluded"
            log.warning(msg)
            warnings.append(msg)
            continue
        per[c] = average_precision(s[:, j], y[:, j])
    if not per:
        raise ValidationError("no class has a positive sample")
    return EvaluationReport(MetricKind.MAP, per, warnings=warnings)
