"""Classification metrics computed from a confusion matrix.

Everything here is a pure function of its inputs. The confusion matrix is
the only source of truth: per-class precision, recall and F1, accuracy,
macro and support-weighted averages are all derived from it.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import EmptyReportError, LabelError

AGGREGATE_KEYS = (
    "accuracy",
    "macro_precision",
    "macro_recall",
    "macro_f1",
    "weighted_precision",
    "weighted_recall",
    "weighted_f1",
)
DROP_KEYS = ("accuracy", "weighted_precision", "weighted_recall", "weighted_f1")


@dataclass(frozen=True)
class ConfusionMatrix:
    """Rows are true classes, columns predicted classes."""

    labels: tuple[int, ...]
    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts)
        n = len(self.labels)
        if counts.shape != (n, n):
            raise ValueError(f"counts shape {counts.shape} does not match {n} labels")
        if not np.issubdtype(counts.dtype, np.integer):
            if not np.all(np.equal(np.mod(counts, 1), 0)):
                raise ValueError("confusion counts must be integers")
            counts = counts.astype(np.int64)
        if np.any(counts < 0):
            raise ValueError("confusion counts must be non-negative")
        counts = counts.astype(np.int64, copy=True)
        counts.setflags(write=False)
        object.__setattr__(self, "labels", tuple(int(l) for l in self.labels))
        object.__setattr__(self, "counts", counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def support(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def __eq__(self, other):
        if not isinstance(other, ConfusionMatrix):
            return NotImplemented
        return self.labels == other.labels and np.array_equal(self.counts, other.counts)

    def __hash__(self):
        return hash((self.labels, self.counts.tobytes()))


@dataclass(frozen=True)
class ClassMetrics:
    label: int
    precision: float
    recall: float
    f1: float
    support: int
    degenerate: tuple[str, ...] = ()


@dataclass(frozen=True)
class EvalReport:
    per_class: tuple[ClassMetrics, ...]
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    weighted_precision: float
    weighted_recall: float
    weighted_f1: float
    confusion: ConfusionMatrix

    def aggregates(self) -> dict[str, float]:
        return {key: getattr(self, key) for key in AGGREGATE_KEYS}

    def to_dict(self) -> dict:
        return {
            "labels": list(self.confusion.labels),
            "per_class": [
                {
                    "label": m.label,
                    "precision": m.precision,
                    "recall": m.recall,
                    "f1": m.f1,
                    "support": m.support,
                    "degenerate": list(m.degenerate),
                }
                for m in self.per_class
            ],
            **self.aggregates(),
            "confusion": self.confusion.counts.tolist(),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "EvalReport":
        cm = ConfusionMatrix(tuple(data["labels"]), np.array(data["confusion"], dtype=np.int64))
        per_class = tuple(
            ClassMetrics(
                label=int(m["label"]),
                precision=float(m["precision"]),
                recall=float(m["recall"]),
                f1=float(m["f1"]),
                support=int(m["support"]),
                degenerate=tuple(m.get("degenerate", ())),
            )
            for m in data["per_class"]
        )
        return cls(per_class=per_class, confusion=cm, **{k: float(data[k]) for k in AGGREGATE_KEYS})


@dataclass(frozen=True)
class LabelMapping:
    """How a model's label range relates to a target dataset's label range.

    Evaluation runs over the union of both ranges. Predictions a model makes
    into classes the target dataset does not contain simply count as errors.
    """

    source_range: tuple[int, int]
    target_range: tuple[int, int]

    @property
    def shared(self) -> tuple[int, ...]:
        lo = max(self.source_range[0], self.target_range[0])
        hi = min(self.source_range[1], self.target_range[1])
        return tuple(range(lo, hi + 1))

    @property
    def union(self) -> tuple[int, ...]:
        lo = min(self.source_range[0], self.target_range[0])
        hi = max(self.source_range[1], self.target_range[1])
        return tuple(range(lo, hi + 1))


@dataclass(frozen=True)
class CrossEvalReport:
    home: EvalReport
    foreign: EvalReport
    performance_drop: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "home": self.home.to_dict(),
            "foreign": self.foreign.to_dict(),
            "performance_drop": dict(self.performance_drop),
        }


def confusion_matrix(true_labels: Sequence[int], predicted_labels: Sequence[int],
                     label_space: Sequence[int]) -> ConfusionMatrix:
    if len(true_labels) != len(predicted_labels):
        raise ValueError(
            f"label sequences differ in length: {len(true_labels)} vs {len(predicted_labels)}"
        )
    labels = tuple(int(l) for l in label_space)
    index = {label: i for i, label in enumerate(labels)}
    counts = np.zeros((len(labels), len(labels)), dtype=np.int64)
    for kind, seq in (("true", true_labels), ("predicted", predicted_labels)):
        for value in seq:
            if int(value) not in index:
                raise LabelError(f"{kind} label {value} is outside label space {list(labels)}")
    if len(true_labels):
        rows = np.fromiter((index[int(t)] for t in true_labels), dtype=np.int64)
        cols = np.fromiter((index[int(p)] for p in predicted_labels), dtype=np.int64)
        np.add.at(counts, (rows, cols), 1)
    return ConfusionMatrix(labels, counts)


def _ratio(num: float, den: float) -> tuple[float, bool]:
    if den == 0:
        return 0.0, True
    return num / den, False


def per_class_metrics(cm: ConfusionMatrix) -> list[ClassMetrics]:
    """Precision, recall and F1 for every class of ``cm``.

    A zero denominator yields 0.0 and records the metric's name in
    ``ClassMetrics.degenerate`` instead of raising.
    """
    counts = cm.counts
    column_sums = counts.sum(axis=0)
    row_sums = counts.sum(axis=1)
    out = []
    for j, label in enumerate(cm.labels):
        tp = float(counts[j, j])
        flags = []
        precision, bad = _ratio(tp, float(column_sums[j]))
        if bad:
            flags.append("precision")
        recall, bad = _ratio(tp, float(row_sums[j]))
        if bad:
            flags.append("recall")
        if precision + recall == 0:
            f1 = 0.0
            flags.append("f1")
        else:
            f1 = 2 * precision * recall / (precision + recall)
        out.append(ClassMetrics(label, precision, recall, f1, int(row_sums[j]), tuple(flags)))
    return out


def aggregate(cm: ConfusionMatrix) -> EvalReport:
    total = cm.total
    if total == 0:
        raise EmptyReportError("cannot aggregate an empty confusion matrix")
    per_class = per_class_metrics(cm)
    n = len(per_class)

    def macro(name):
        return float(sum(getattr(m, name) for m in per_class) / n)

    def weighted(name):
        # left-to-right accumulation, so results do not depend on BLAS reduction order
        return float(sum(getattr(m, name) * m.support for m in per_class) / total)

    return EvalReport(
        per_class=tuple(per_class),
        accuracy=float(np.trace(cm.counts)) / total,
        macro_precision=macro("precision"),
        macro_recall=macro("recall"),
        macro_f1=macro("f1"),
        weighted_precision=weighted("precision"),
        weighted_recall=weighted("recall"),
        weighted_f1=weighted("f1"),
        confusion=cm,
    )


def performance_drop(home: Mapping[str, float], foreign: Mapping[str, float],
                     keys: Sequence[str] = DROP_KEYS) -> dict[str, float]:
    """In-domain minus out-of-domain value for each aggregate in ``keys``."""
    return {key: float(home[key]) - float(foreign[key]) for key in keys}


def cross_report(home: EvalReport, foreign: EvalReport) -> CrossEvalReport:
    return CrossEvalReport(home, foreign, performance_drop(home.aggregates(), foreign.aggregates()))


# -- rendering ---------------------------------------------------------------

def format_report(report: EvalReport, digits: int = 3, title: str | None = None) -> str:
    """Plain-text table: one row per metric, one column per class, then aggregates."""
    labels = [str(m.label) for m in report.per_class]
    header = ["metric", *labels, "accuracy", "macro avg", "weighted avg"]
    fmt = f"{{:.{digits}f}}".format
    rows = []
    for name in ("precision", "recall", "f1"):
        row = [name if name != "f1" else "f1-score"]
        row += [fmt(getattr(m, name)) for m in report.per_class]
        row.append(fmt(report.accuracy) if name == "precision" else "")
        row.append(fmt(getattr(report, f"macro_{name}")))
        row.append(fmt(getattr(report, f"weighted_{name}")))
        rows.append(row)
    rows.append(["support", *[str(m.support) for m in report.per_class], str(report.confusion.total), "", ""])
    widths = [max(len(r[i]) for r in [header, *rows]) for i in range(len(header))]
    lines = [title] if title else []
    for r in [header, *rows]:
        lines.append("  ".join(cell.rjust(w) for cell, w in zip(r, widths)).rstrip())
    return "\n".join(lines) + "\n"


def format_cross_report(report: CrossEvalReport, digits: int = 2,
                        names: tuple[str, str] = ("home", "foreign")) -> str:
    parts = [
        format_report(report.home, digits, title=f"[{names[0]}]"),
        format_report(report.foreign, digits, title=f"[{names[1]}]"),
        "[performance drop]",
    ]
    for key in DROP_KEYS:
        h = report.home.aggregates()[key]
        f = report.foreign.aggregates()[key]
        parts.append(f"{key:<20} {h:.4f} -> {f:.4f}  drop {report.performance_drop[key]:.{digits}f}")
    return "\n".join(parts) + "\n"


def write_confusion(cm: ConfusionMatrix) -> str:
    """Tab-delimited integer grid with a header row of predicted labels."""
    buf = io.StringIO()
    writer = csv.writer(buf, delimiter="\t", lineterminator="\n")
    writer.writerow(["true\\pred", *cm.labels])
    for label, row in zip(cm.labels, cm.counts):
        writer.writerow([label, *(int(v) for v in row)])
    return buf.getvalue()


def read_confusion(text: str) -> ConfusionMatrix:
    rows = [r for r in csv.reader(io.StringIO(text), delimiter="\t") if r]
    labels = tuple(int(v) for v in rows[0][1:])
    counts = np.array([[int(v) for v in r[1:]] for r in rows[1:]], dtype=np.int64)
    row_labels = tuple(int(r[0]) for r in rows[1:])
    if row_labels != labels:
        raise ValueError("row labels do not match column labels")
    return ConfusionMatrix(labels, counts)


def dumps_report(report: EvalReport | CrossEvalReport) -> str:
    return json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"
