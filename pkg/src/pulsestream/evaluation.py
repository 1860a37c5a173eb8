"""Confusion-matrix construction and the four classification metrics.

precision = TP/(FP+TP), recall = TP/(FN+TP), F1 = harmonic mean, and
accuracy = (TP+TN)/(TP+FP+FN+TN), computed class-vs-rest per sentiment.
Zero denominators yield 0 and are flagged in the report.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from .errors import InvalidArgument
from .textprep import Label


@dataclass(frozen=True)
class ClassCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass
class ConfusionMatrix:
    counts: dict  # Label -> ClassCounts
    n: int


def confusion(predictions: Sequence, truths: Sequence) -> ConfusionMatrix:
    if len(predictions) != len(truths):
        raise InvalidArgument(
            f"length mismatch: {len(predictions)} predictions vs {len(truths)} truths")
    if not predictions:
        raise InvalidArgument("empty input")
    counts = {}
    for cls in Label:
        tp = fp = fn = tn = 0
        for p, t in zip(predictions, truths):
            if p is cls and t is cls:
                tp += 1
            elif p is cls:
                fp += 1
            elif t is cls:
                fn += 1
            else:
                tn += 1
        counts[cls] = ClassCounts(tp=tp, fp=fp, fn=fn, tn=tn)
    return ConfusionMatrix(counts=counts, n=len(predictions))


def precision(cm: ConfusionMatrix, cls: Label) -> float:
    c = cm.counts[cls]
    denom = c.fp + c.tp
    return c.tp / denom if denom else 0.0


def recall(cm: ConfusionMatrix, cls: Label) -> float:
    c = cm.counts[cls]
    denom = c.fn + c.tp
    return c.tp / denom if denom else 0.0


def f1(p: float, r: float) -> float:
    if not 0.0 <= p <= 1.0 or not 0.0 <= r <= 1.0:
        raise InvalidArgument("precision/recall must be in [0, 1]")
    denom = p + r
    return 2.0 * p * r / denom if denom else 0.0


def accuracy(cm: ConfusionMatrix) -> float:
    if cm.n == 0:
        raise InvalidArgument("empty confusion matrix")
    c = cm.counts[Label.NEGATIVE]  # class-symmetric for two classes
    return (c.tp + c.tn) / c.total


@dataclass
class ClassMetrics:
    precision: float
    recall: float
    f1: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class EvalReport:
    per_class: dict  # Label -> ClassMetrics
    macro_precision: float
    macro_recall: float
    macro_f1: float
    accuracy: float
    degenerate: list = field(default_factory=list)  # zero-denominator flags

    def to_dict(self) -> dict:
        return {
            "per_class": {str(cls): m.to_dict() for cls, m in self.per_class.items()},
            "overall": {
                "macro_precision": self.macro_precision,
                "macro_recall": self.macro_recall,
                "macro_f1": self.macro_f1,
                "accuracy": self.accuracy,
            },
            "degenerate": self.degenerate,
        }


def report_from_confusion(cm: ConfusionMatrix) -> EvalReport:
    per_class = {}
    degenerate = []
    for cls in Label:
        c = cm.counts[cls]
        if c.fp + c.tp == 0:
            degenerate.append(f"{cls}: no predicted samples (precision=0)")
        if c.fn + c.tp == 0:
            degenerate.append(f"{cls}: no true samples (recall=0)")
        p = precision(cm, cls)
        r = recall(cm, cls)
        per_class[cls] = ClassMetrics(precision=p, recall=r, f1=f1(p, r))
    ms = list(per_class.values())
    return EvalReport(
        per_class=per_class,
        macro_precision=sum(m.precision for m in ms) / len(ms),
        macro_recall=sum(m.recall for m in ms) / len(ms),
        macro_f1=sum(m.f1 for m in ms) / len(ms),
        accuracy=accuracy(cm),
        degenerate=degenerate,
    )


def evaluate(params, vocab, labeled_set: Sequence) -> EvalReport:
    """labeled_set: sequence of (text, Label). Predicts every sample."""
    from .model import predict

    if not labeled_set:
        raise InvalidArgument("labeled_set must be non-empty")
    preds = [predict(params, vocab, text).label for text, _ in labeled_set]
    truths = [lab for _, lab in labeled_set]
    return report_from_confusion(confusion(preds, truths))
