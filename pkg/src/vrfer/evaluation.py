"""Classification metrics, two-model agreement and report rendering."""

from __future__ import annotations

import json
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal

import numpy as np

from .data import EMOTIONS, N_CLASSES
from .errors import LabelError, ShapeError


def _check_pair(predictions, labels) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(predictions, dtype=np.int64).reshape(-1)
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    if len(p) != len(y):
        raise ShapeError(f"length mismatch: {len(p)} predictions vs {len(y)} labels")
    for name, arr in (("prediction", p), ("label", y)):
        if arr.size and (arr.min() < 0 or arr.max() >= N_CLASSES):
            raise LabelError(f"{name} indices must lie in 0..{N_CLASSES - 1}")
    return p, y


def harmonic_f1(precision: float, recall: float) -> float:
    """2PR/(P+R), defined as 0 when P+R = 0."""
    total = precision + recall
    return 0.0 if total == 0 else 2.0 * precision * recall / total


def confusion_matrix(predictions, labels) -> np.ndarray:
    """Counts with rows = true class, columns = predicted class."""
    p, y = _check_pair(predictions, labels)
    cm = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    np.add.at(cm, (y, p), 1)
    return cm


@dataclass
class EvalReport:
    accuracy: float
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray
    confusion: np.ndarray

    @property
    def macro(self) -> dict:
        return {"precision": float(np.mean(self.precision)), "recall": float(np.mean(self.recall)),
                "f1": float(np.mean(self.f1))}

    @property
    def total(self) -> int:
        return int(self.support.sum())

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "per_class": {EMOTIONS[c]: {"precision": float(self.precision[c]), "recall": float(self.recall[c]),
                                        "f1": float(self.f1[c]), "support": int(self.support[c])}
                          for c in range(N_CLASSES)},
            "macro": self.macro,
            "confusion": self.confusion.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        per = d["per_class"]
        col = lambda key: np.array([per[name][key] for name in EMOTIONS], dtype=np.float64)  # noqa: E731
        return cls(float(d["accuracy"]), col("precision"), col("recall"), col("f1"),
                   col("support").astype(np.int64), np.array(d["confusion"], dtype=np.int64))

    def __eq__(self, other) -> bool:
        if not isinstance(other, EvalReport):
            return NotImplemented
        return self.to_dict() == other.to_dict()


def evaluate(predictions, labels) -> EvalReport:
    p, y = _check_pair(predictions, labels)
    if len(y) == 0:
        raise ShapeError("cannot evaluate an empty prediction set")
    cm = confusion_matrix(p, y)
    tp = np.diag(cm).astype(np.float64)
    predicted = cm.sum(axis=0)
    support = cm.sum(axis=1)
    precision = np.divide(tp, predicted, out=np.zeros(N_CLASSES), where=predicted > 0)
    recall = np.divide(tp, support, out=np.zeros(N_CLASSES), where=support > 0)
    f1 = np.array([harmonic_f1(a, b) for a, b in zip(precision, recall)])
    return EvalReport(float(tp.sum() / len(y)), precision, recall, f1, support, cm)


@dataclass(frozen=True)
class AgreementTable:
    both_correct: int
    only_a_correct: int
    only_b_correct: int
    both_wrong: int

    @property
    def total(self) -> int:
        return self.both_correct + self.only_a_correct + self.only_b_correct + self.both_wrong

    @property
    def oracle_accuracy(self) -> float:
        if self.total == 0:
            raise ShapeError("oracle accuracy of an empty set is undefined")
        return (self.both_correct + self.only_a_correct + self.only_b_correct) / self.total

    def to_dict(self) -> dict:
        return {"both_correct": self.both_correct, "only_a_correct": self.only_a_correct,
                "only_b_correct": self.only_b_correct, "both_wrong": self.both_wrong, "total": self.total}

    @classmethod
    def from_dict(cls, d: dict) -> "AgreementTable":
        return cls(int(d["both_correct"]), int(d["only_a_correct"]), int(d["only_b_correct"]), int(d["both_wrong"]))


def agreement_analysis(preds_a, preds_b, labels) -> AgreementTable:
    a, y = _check_pair(preds_a, labels)
    b, _ = _check_pair(preds_b, labels)
    ca, cb = a == y, b == y
    return AgreementTable(int(np.sum(ca & cb)), int(np.sum(ca & ~cb)), int(np.sum(~ca & cb)), int(np.sum(~ca & ~cb)))


def oracle_fusion_accuracy(preds_a, preds_b, labels) -> float:
    """Accuracy of a selector that always picks whichever model is right."""
    return agreement_analysis(preds_a, preds_b, labels).oracle_accuracy


def percent(value: float) -> str:
    """Percentage with two decimals, rounding half up."""
    return str((Decimal(repr(float(value))) * 100).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


def _markdown_table(report: EvalReport) -> list[str]:
    lines = ["| Emotion | Precision | Recall | F1 | Support |", "|---|---:|---:|---:|---:|"]
    for c, name in enumerate(EMOTIONS):
        lines.append(f"| {name.capitalize()} | {percent(report.precision[c])} | {percent(report.recall[c])} "
                     f"| {percent(report.f1[c])} | {int(report.support[c])} |")
    m = report.macro
    lines.append(f"| **Average** | {percent(m['precision'])} | {percent(m['recall'])} | {percent(m['f1'])} "
                 f"| {report.total} |")
    return lines


def render_report(reports, fmt: str = "markdown", agreement: AgreementTable | None = None) -> str:
    """Render one report or a ``{name: report}`` mapping, optionally with an agreement table."""
    if isinstance(reports, EvalReport):
        reports = {"model": reports}
    if fmt == "json":
        doc = {name: r.to_dict() for name, r in reports.items()}
        if len(doc) == 1 and agreement is None:
            doc = next(iter(doc.values()))
        elif agreement is not None:
            doc["agreement"] = {**agreement.to_dict(), "oracle_accuracy": agreement.oracle_accuracy}
        return json.dumps(doc, indent=2)
    if fmt != "markdown":
        raise ValueError(f"unknown report format {fmt!r}")
    lines: list[str] = []
    for name, report in reports.items():
        if len(reports) > 1:
            lines += [f"### {name}", ""]
        lines.append(f"Accuracy: {percent(report.accuracy)}%")
        lines.append("")
        lines += _markdown_table(report)
        lines.append("")
    if agreement is not None:
        lines += ["### Agreement", "", "| Both correct | Only A correct | Only B correct | Both wrong | Total |",
                  "|---:|---:|---:|---:|---:|",
                  f"| {agreement.both_correct} | {agreement.only_a_correct} | {agreement.only_b_correct} "
                  f"| {agreement.both_wrong} | {agreement.total} |", "",
                  f"Oracle fusion accuracy: {percent(agreement.oracle_accuracy)}%", ""]
    return "\n".join(lines)
