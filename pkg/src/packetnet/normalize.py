"""Streaming normalizers with per-feature running statistics.

Statistics are updated with the raw value first; the emitted value then uses
the updated statistics.
"""
from __future__ import annotations

from enum import Enum

import numpy as np

from .errors import ConfigurationError
from .streams import Instance


class NormKind(str, Enum):
    NONE = "none"
    MINMAX = "minmax"
    DECIMAL = "decimal"
    ZSCORE = "zscore"
    MEANNORM = "meannorm"
    UNITVECTOR = "unitvector"


class StreamingStats:
    """Count, Welford mean/accumulator, min and max for each feature id seen."""

    def __init__(self, capacity: int = 16):
        self.index: dict[int, int] = {}
        self.count = np.zeros(capacity, dtype=np.int64)
        self.mean = np.zeros(capacity)
        self.m2 = np.zeros(capacity)
        self.min = np.full(capacity, np.inf)
        self.max = np.full(capacity, -np.inf)

    def _grow(self, need):
        cap = len(self.count)
        if need <= cap:
            return
        new = max(need, 2 * cap)
        pad = new - cap
        self.count = np.concatenate([self.count, np.zeros(pad, dtype=np.int64)])
        self.mean = np.concatenate([self.mean, np.zeros(pad)])
        self.m2 = np.concatenate([self.m2, np.zeros(pad)])
        self.min = np.concatenate([self.min, np.full(pad, np.inf)])
        self.max = np.concatenate([self.max, np.full(pad, -np.inf)])

    def rows(self, ids) -> np.ndarray:
        out = np.empty(len(ids), dtype=np.int64)
        for k, j in enumerate(ids.tolist() if isinstance(ids, np.ndarray) else ids):
            row = self.index.get(j)
            if row is None:
                row = len(self.index)
                self.index[j] = row
            out[k] = row
        self._grow(len(self.index))
        return out

    def update(self, ids, values) -> np.ndarray:
        """Fold one observation per (distinct) id in; returns their rows."""
        rows = self.rows(ids)
        values = np.asarray(values, dtype=np.float64)
        self.count[rows] += 1
        k = self.count[rows]
        old_mean = self.mean[rows]
        new_mean = old_mean + (values - old_mean) / k
        self.mean[rows] = new_mean
        self.m2[rows] += (values - old_mean) * (values - new_mean)
        self.min[rows] = np.minimum(self.min[rows], values)
        self.max[rows] = np.maximum(self.max[rows], values)
        return rows

    def variance(self, rows) -> np.ndarray:
        k = self.count[rows]
        return np.where(k >= 2, self.m2[rows] / np.maximum(k - 1, 1), 0.0)

    def summary(self, feature: int) -> dict:
        row = self.index[feature]
        return dict(count=int(self.count[row]), mean=float(self.mean[row]),
                    var=float(self.variance(np.array([row]))[0]),
                    min=float(self.min[row]), max=float(self.max[row]))

    def state(self) -> dict:
        n = len(self.index)
        ids = np.array(sorted(self.index, key=self.index.get), dtype=np.int64)
        return dict(ids=ids, count=self.count[:n].copy(), mean=self.mean[:n].copy(),
                    m2=self.m2[:n].copy(), min=self.min[:n].copy(), max=self.max[:n].copy())

    @classmethod
    def from_state(cls, state: dict) -> "StreamingStats":
        n = len(state["ids"])
        stats = cls(max(n, 16))
        stats.index = {int(j): k for k, j in enumerate(state["ids"])}
        for name in ("count", "mean", "m2", "min", "max"):
            getattr(stats, name)[:n] = state[name]
        return stats


def stats_merge_check(stats: StreamingStats, history: dict, rtol: float = 1e-9) -> bool:
    """Compare streaming statistics with a one-shot recomputation from raw history.

    ``history`` maps feature id to the full sequence of values fed so far.
    """
    if set(history) - set(stats.index):
        return False
    for j, values in history.items():
        values = np.asarray(values, dtype=np.float64)
        got = stats.summary(j)
        if got["count"] != len(values):
            return False
        if len(values) == 0:
            continue
        var = values.var(ddof=1) if len(values) > 1 else 0.0
        if not np.isclose(got["mean"], values.mean(), rtol=rtol, atol=0.0):
            return False
        if not np.isclose(got["var"], var, rtol=rtol, atol=0.0 if var else 1e-300):
            return False
        if got["min"] != values.min() or got["max"] != values.max():
            return False
    return True


def normalize_instance(stats: StreamingStats, instance: Instance, kind, m: int = 3) -> Instance:
    kind = NormKind(kind)
    x = instance.values
    if kind == NormKind.NONE or instance.empty:
        return instance
    if kind == NormKind.DECIMAL:
        out = x / 10.0 ** m
    elif kind == NormKind.UNITVECTOR:
        norm = np.sqrt(np.dot(x, x))
        out = x / norm if norm > 0 else np.zeros_like(x)
    else:
        rows = stats.update(instance.ids, x)
        if kind == NormKind.ZSCORE:
            sd = np.sqrt(stats.variance(rows))
            centred = x - stats.mean[rows]
            out = np.divide(centred, sd, out=np.zeros_like(x), where=sd > 0)
        elif kind == NormKind.MEANNORM:
            out = x - stats.mean[rows]
        else:
            lo, hi = stats.min[rows], stats.max[rows]
            span = hi - lo
            out = np.divide(x - lo, span, out=np.zeros_like(x), where=span > 0)
    return Instance(instance.t, instance.ids, out, instance.label)


class Normalizer:
    """Callable wrapper owning its statistics for one stream."""

    def __init__(self, kind="zscore", m: int = 3):
        try:
            self.kind = NormKind(kind)
        except ValueError:
            raise ConfigurationError(f"unknown normalizer {kind!r}") from None
        self.m = m
        self.stats = StreamingStats()

    def __call__(self, instance: Instance) -> Instance:
        return normalize_instance(self.stats, instance, self.kind, self.m)
