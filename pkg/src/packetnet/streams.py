"""Dataset readers and haphazard-stream constructions.

Feature ids are 1-based column numbers, matching the svmlight convention.
"""
from __future__ import annotations

import csv
import gzip
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import ConfigurationError, ParseError
from .numerics import make_rng


@dataclass(frozen=True)
class DenseRecord:
    values: np.ndarray
    label: int


@dataclass(frozen=True)
class Instance:
    """One stream element: the present features (sorted by id), their values, the label."""

    t: int
    ids: np.ndarray
    values: np.ndarray
    label: int

    @classmethod
    def from_pairs(cls, t: int, pairs, label: int) -> "Instance":
        pairs = sorted((int(j), float(v)) for j, v in pairs)
        ids = np.array([j for j, _ in pairs], dtype=np.int64)
        vals = np.array([v for _, v in pairs], dtype=np.float64)
        if len(set(ids.tolist())) != len(ids):
            raise ValueError("duplicate feature ids")
        return cls(t, ids, vals, int(label))

    def pairs(self):
        return list(zip(self.ids.tolist(), self.values.tolist()))

    def __len__(self):
        return len(self.ids)

    @property
    def empty(self) -> bool:
        return len(self.ids) == 0


def _open_text(path):
    path = Path(path)
    if path.suffix == ".gz":
        return io.TextIOWrapper(gzip.open(path, "rb"), encoding="utf-8")
    return open(path, "r", encoding="utf-8")


def coerce_label(token: str, positive=None) -> int:
    token = token.strip()
    if positive is not None:
        return int(token == str(positive))
    try:
        value = float(token)
    except ValueError:
        raise ValueError(f"non-numeric label {token!r}") from None
    return int(value > 0)


def read_csv(path, label_column: int = -1, header: bool = False,
             positive_label=None) -> list[DenseRecord]:
    """Parse a rectangular comma-separated file.

    Labels map to {0, 1}: ``positive_label`` if given (e.g. ``"g"`` for
    magic04), otherwise values > 0 are positive so both 0/1 and -1/+1 work.
    """
    records = []
    width = None
    with _open_text(path) as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if header and lineno == 1:
                continue
            if not row or all(not cell.strip() for cell in row):
                continue
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise ParseError(f"expected {width} columns, got {len(row)}", lineno)
            col = label_column % width
            try:
                label = coerce_label(row[col], positive_label)
                values = np.array([float(c) for k, c in enumerate(row) if k != col])
            except ValueError as exc:
                raise ParseError(str(exc), lineno) from None
            records.append(DenseRecord(values, label))
    return records


def read_svmlight(path, n_features: int, passthrough: bool = False):
    """Parse ``label idx:val ...`` lines with 1-based indices.

    Returns dense records of width ``n_features``, or, with ``passthrough``,
    instances carrying only the listed pairs (native haphazard data).
    """
    out = []
    with _open_text(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            tokens = line.split()
            try:
                label = coerce_label(tokens[0])
                pairs = []
                for tok in tokens[1:]:
                    idx, val = tok.split(":", 1)
                    pairs.append((int(idx), float(val)))
            except ValueError as exc:
                raise ParseError(f"malformed token ({exc})", lineno) from None
            for idx, _ in pairs:
                if idx < 1 or idx > n_features:
                    raise ParseError(f"feature index {idx} outside 1..{n_features}", lineno)
            if passthrough:
                out.append(Instance.from_pairs(len(out), pairs, label))
            else:
                values = np.zeros(n_features)
                for idx, val in pairs:
                    values[idx - 1] = val
                out.append(DenseRecord(values, label))
    return out


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def interval_of(t: int, total: int, intervals: int = 5) -> int:
    """1-based interval of instance ``t`` (0-based) in a stream of ``total`` instances."""
    return (intervals * t) // total + 1


def _from_mask(records: Sequence[DenseRecord], keep: np.ndarray) -> Iterator[Instance]:
    for t, (rec, row) in enumerate(zip(records, keep)):
        cols = np.flatnonzero(row)
        yield Instance(t, cols + 1, np.asarray(rec.values, dtype=np.float64)[cols], rec.label)


def mask_bernoulli(records, p: float, seed: int) -> list[Instance]:
    """Keep each feature of each record independently with probability ``p``."""
    if not 0.0 <= p <= 1.0:
        raise ConfigurationError("p must lie in [0, 1]")
    records = list(records)
    if not records:
        return []
    n = len(records[0].values)
    keep = make_rng(seed).random((len(records), n)) < p
    return list(_from_mask(records, keep))


def _interval_schedule(records, intervals, kept_for_interval) -> list[Instance]:
    records = list(records)
    if not records:
        raise ConfigurationError("schedule needs a nonempty record list")
    total = len(records)
    n = len(records[0].values)
    keep = np.zeros((total, n), dtype=bool)
    for t in range(total):
        keep[t, kept_for_interval(interval_of(t, total, intervals), n) - 1] = True
    return list(_from_mask(records, keep))


def sudden_counts(n: int, intervals: int = 5) -> list[int]:
    return [round_half_up(k * n / intervals) for k in range(1, intervals + 1)]


def schedule_sudden(records, intervals: int = 5) -> list[Instance]:
    """Interval k exposes features 1..round(k*N/intervals)."""
    return _interval_schedule(
        records, intervals,
        lambda k, n: np.arange(1, round_half_up(k * n / intervals) + 1))


def schedule_obsolete(records, intervals: int = 5) -> list[Instance]:
    """Interval k exposes features 1..round((intervals+1-k)*N/intervals)."""
    return _interval_schedule(
        records, intervals,
        lambda k, n: np.arange(1, round_half_up((intervals + 1 - k) * n / intervals) + 1))


def reappearing_sets(n: int):
    half = round_half_up(n / 2)
    return np.arange(1, half + 1), np.arange(half + 1, n + 1)


def schedule_reappearing(records, intervals: int = 5) -> list[Instance]:
    """Odd intervals expose the first half of the features, even ones the rest."""
    return _interval_schedule(
        records, intervals, lambda k, n: reappearing_sets(n)[0 if k % 2 else 1])


def schedule_alternating(records, p_low: float, p_high: float, period: int,
                         seed: int) -> list[Instance]:
    if period <= 0:
        raise ConfigurationError("period must be positive")
    for p in (p_low, p_high):
        if not 0.0 <= p <= 1.0:
            raise ConfigurationError("p must lie in [0, 1]")
    records = list(records)
    if not records:
        return []
    n = len(records[0].values)
    t = np.arange(len(records))
    p = np.where((t // period) % 2 == 0, p_low, p_high)
    keep = make_rng(seed).random((len(records), n)) < p[:, None]
    return list(_from_mask(records, keep))


def shuffle_records(records, seed: int) -> list[DenseRecord]:
    records = list(records)
    order = make_rng(seed).permutation(len(records))
    return [records[k] for k in order]


def build_stream(records, schedule: str, *, p: float = 0.5, seed: int = 0,
                 intervals: int = 5, p_low: float = 0.25, p_high: float = 0.75,
                 period: int = 100) -> list[Instance]:
    """Dispatch on a schedule name: bernoulli, sudden, obsolete, reappearing, alternating, full."""
    if schedule == "bernoulli":
        return mask_bernoulli(records, p, seed)
    if schedule == "full":
        return mask_bernoulli(records, 1.0, seed)
    if schedule == "sudden":
        return schedule_sudden(records, intervals)
    if schedule == "obsolete":
        return schedule_obsolete(records, intervals)
    if schedule == "reappearing":
        return schedule_reappearing(records, intervals)
    if schedule == "alternating":
        return schedule_alternating(records, p_low, p_high, period, seed)
    raise ConfigurationError(f"unknown schedule {schedule!r}")
