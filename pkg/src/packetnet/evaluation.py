"""Prequential (test-then-train) runner and the classification metrics."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import TrainingError
from .streams import interval_of

METRICS = ("balanced_accuracy", "accuracy", "auroc", "auprc", "errors")


@dataclass
class MetricRecord:
    scores: list = field(default_factory=list)
    preds: list = field(default_factory=list)
    labels: list = field(default_factory=list)
    intervals: list = field(default_factory=list)
    empty: list = field(default_factory=list)
    seconds: float = 0.0

    def __len__(self):
        return len(self.labels)

    def append(self, score, pred, label, interval=1, empty=False):
        self.scores.append(float(score))
        self.preds.append(int(pred))
        self.labels.append(int(label))
        self.intervals.append(int(interval))
        self.empty.append(bool(empty))

    def arrays(self):
        return (np.asarray(self.scores, dtype=np.float64), np.asarray(self.preds, dtype=np.int64),
                np.asarray(self.labels, dtype=np.int64))

    def subset(self, mask) -> "MetricRecord":
        mask = np.asarray(mask, dtype=bool)
        rec = MetricRecord()
        for name in ("scores", "preds", "labels", "intervals", "empty"):
            setattr(rec, name, [v for v, keep in zip(getattr(self, name), mask) if keep])
        return rec

    def write_log(self, path):
        """Line-oriented per-instance log: ``t,score,pred,label,interval,empty``."""
        with open(path, "w") as fh:
            fh.write("t,score,pred,label,interval,empty\n")
            for t, row in enumerate(zip(self.scores, self.preds, self.labels,
                                        self.intervals, self.empty)):
                s, p, y, k, e = row
                fh.write(f"{t},{s!r},{p},{y},{k},{int(e)}\n")

    @classmethod
    def read_log(cls, path) -> "MetricRecord":
        rec = cls()
        with open(path) as fh:
            next(fh)
            for line in fh:
                _, s, p, y, k, e = line.strip().split(",")
                rec.append(float(s), int(p), int(y), int(k), bool(int(e)))
        return rec


def predicted_class(probs) -> int:
    # argmax with ties resolved towards class 0
    return int(np.argmax(probs))


def _as_arrays(preds_or_scores, labels):
    return np.asarray(preds_or_scores), np.asarray(labels, dtype=np.int64)


def balanced_accuracy(preds, labels) -> float:
    preds, labels = _as_arrays(preds, labels)
    pos = labels == 1
    neg = ~pos
    if not pos.any() or not neg.any():
        return math.nan
    sens = np.mean(preds[pos] == 1)
    spec = np.mean(preds[neg] == 0)
    return float((sens + spec) / 2.0)


def accuracy(preds, labels) -> float:
    preds, labels = _as_arrays(preds, labels)
    if len(labels) == 0:
        return math.nan
    return 1.0 - error_count(preds, labels) / len(labels)


def error_count(preds, labels) -> int:
    preds, labels = _as_arrays(preds, labels)
    return int(np.sum(preds != labels))


def auroc(scores, labels) -> float:
    """Mann-Whitney estimate: P(score_pos > score_neg) + P(tie) / 2."""
    scores, labels = _as_arrays(scores, labels)
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        return math.nan
    ranks = rankdata(scores)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auprc(scores, labels) -> float:
    """Average precision: sum of precision at each distinct threshold weighted by recall gain."""
    scores, labels = _as_arrays(scores, labels)
    n_pos = int((labels == 1).sum())
    if n_pos == 0:
        return math.nan
    order = np.argsort(-scores, kind="mergesort")
    s = scores[order]
    y = labels[order] == 1
    # last index of each run of equal scores
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tp = np.cumsum(y)[ends]
    predicted = ends + 1
    precision = tp / predicted
    recall = tp / n_pos
    gain = np.diff(np.r_[0.0, recall])
    return float(np.sum(gain * precision))


@dataclass
class MetricReport:
    n: int
    errors: int
    accuracy: float
    balanced_accuracy: float
    auroc: float
    auprc: float
    seconds: float
    interval_bacc: list

    @classmethod
    def from_record(cls, record: MetricRecord, intervals: int = 5) -> "MetricReport":
        scores, preds, labels = record.arrays()
        return cls(len(labels), error_count(preds, labels), accuracy(preds, labels),
                   balanced_accuracy(preds, labels), auroc(scores, labels),
                   auprc(scores, labels), record.seconds,
                   interval_report(record, intervals))

    def as_dict(self, percent: bool = True) -> dict:
        k = 100.0 if percent else 1.0
        d = dict(instances=self.n, errors=self.errors, accuracy=self.accuracy * k,
                 balanced_accuracy=self.balanced_accuracy * k, auroc=self.auroc * k,
                 auprc=self.auprc * k, seconds=self.seconds)
        for i, v in enumerate(self.interval_bacc, start=1):
            d[f"interval_{i}_balanced_accuracy"] = v * k
        return d

    def to_text(self) -> str:
        lines = []
        for key, value in self.as_dict().items():
            if isinstance(value, float):
                value = "missing" if math.isnan(value) else f"{value:.2f}"
            lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"


def interval_report(record: MetricRecord, intervals: int = 5) -> list:
    """Balanced accuracy computed separately inside each interval id 1..intervals."""
    _, preds, labels = record.arrays()
    ids = np.asarray(record.intervals)
    out = []
    for k in range(1, intervals + 1):
        mask = ids == k
        out.append(balanced_accuracy(preds[mask], labels[mask]) if mask.any() else math.nan)
    return out


def aggregate_runs(reports) -> dict:
    """Mean and sample standard deviation of each metric over runs."""
    dicts = [r.as_dict() if isinstance(r, MetricReport) else dict(r) for r in reports]
    out = {}
    for key in dicts[0]:
        vals = np.array([d[key] for d in dicts], dtype=np.float64)
        std = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
        out[key] = (float(vals.mean()), std)
    return out


def format_aggregate(agg: dict) -> str:
    lines = []
    for key, (mean, std) in agg.items():
        lines.append(f"{key} = missing" if math.isnan(mean) else f"{key} = {mean:.2f} +- {std:.2f}")
    return "\n".join(lines) + "\n"


def run_prequential(model, stream, normalizer=None, intervals: int = 5, start: int = 0,
                    stop: int | None = None, record: MetricRecord | None = None,
                    callback=None) -> MetricRecord:
    """Predict on each instance, record, then train on it exactly once.

    ``model`` needs ``forward(instance)`` returning an object with ``probs`` and
    ``empty``, and ``train_step(instance, label, fwd=...)``. Positions
    ``start..stop`` of ``stream`` are consumed (interval ids always refer to
    the whole stream), appending to ``record`` if one is given. ``callback``
    is invoked as ``callback(position, model)`` before each instance. A
    :class:`TrainingError` aborts the run; the partial record is attached to
    the exception as ``record``.
    """
    stream = stream if isinstance(stream, (list, tuple)) else list(stream)
    total = len(stream)
    stop = total if stop is None else min(stop, total)
    record = MetricRecord() if record is None else record
    began = time.perf_counter()
    try:
        for pos in range(start, stop):
            inst = stream[pos]
            if callback is not None:
                callback(pos, model)
            x = normalizer(inst) if normalizer is not None else inst
            fwd = model.forward(x)
            probs = fwd.probs
            record.append(probs[1], predicted_class(probs), inst.label,
                          interval_of(pos, total, intervals), fwd.empty)
            model.train_step(x, inst.label, fwd=fwd)
    except TrainingError as exc:
        record.seconds += time.perf_counter() - began
        exc.record = record
        raise
    record.seconds += time.perf_counter() - began
    return record
