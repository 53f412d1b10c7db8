"""Single fixed-width LSTM fed by online imputation.

This model needs the total feature count up front, which haphazard streams do
not provide; it exists only as a point of comparison for the packet model.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cells import CellKind, CellSpec, cell_backward, cell_forward
from .errors import ConfigurationError, TrainingError
from .numerics import adamw_rows, make_rng, softmax, softmax_xent
from .packet import Head
from .streams import Instance

IMPUTERS = ("ffill", "rolling_mean")


class Imputer:
    """Per-feature last value and ring buffer of the last ``window`` observations."""

    def __init__(self, n_features: int, method: str = "ffill", window: int = 5):
        if method not in IMPUTERS:
            raise ConfigurationError(f"imputer: expected one of {IMPUTERS}")
        self.n = n_features
        self.method = method
        self.window = window
        self.last = np.zeros(n_features)
        self.buffer = np.zeros((n_features, window))
        self.filled = np.zeros(n_features, dtype=np.int64)
        self.head = np.zeros(n_features, dtype=np.int64)

    def observe(self, cols, values):
        self.last[cols] = values
        self.buffer[cols, self.head[cols]] = values
        self.head[cols] = (self.head[cols] + 1) % self.window
        self.filled[cols] = np.minimum(self.filled[cols] + 1, self.window)

    def fill_values(self) -> np.ndarray:
        if self.method == "ffill":
            return self.last.copy()
        out = np.zeros(self.n)
        seen = self.filled > 0
        out[seen] = self.buffer[seen].sum(axis=1) / self.filled[seen]
        return out

    def __call__(self, instance: Instance) -> np.ndarray:
        """Dense vector: observed values pass through, absent ones come from history.

        Never-observed features are filled with 0.
        """
        cols = instance.ids - 1
        if np.any(cols < 0) or np.any(cols >= self.n):
            raise ConfigurationError(f"feature id outside 1..{self.n}")
        dense = self.fill_values()
        dense[cols] = instance.values
        self.observe(cols, instance.values)
        return dense


def impute(state: Imputer, instance: Instance, method: str | None = None) -> np.ndarray:
    if method is not None and method != state.method:
        raise ConfigurationError("imputer state was built for a different method")
    return state(instance)


@dataclass
class SingleForward:
    probs: np.ndarray
    logits: np.ndarray
    empty: bool
    dense: np.ndarray
    cell_out: object
    head_cache: tuple
    t: int


class SingleLSTM:
    """One vanilla LSTM over the dense imputed vector, with a two-layer head on ``h``."""

    def __init__(self, n_features: int, hidden: int = 32, imputer: str = "ffill",
                 lr: float = 0.001, seed: int = 0, beta1=0.9, beta2=0.999, eps=1e-8,
                 weight_decay=0.01, window: int = 5):
        self.spec = CellSpec(CellKind.VANILLALSTM, hidden, n_in=n_features)
        self.rng = make_rng(seed)
        self.theta = self.spec.init(self.rng)
        self.m = np.zeros_like(self.theta)
        self.v = np.zeros_like(self.theta)
        self.step = 0
        self.head = Head(hidden, hidden, 2, self.rng)
        self.h = np.zeros(hidden)
        self.c = np.zeros(hidden)
        self.imputer = Imputer(n_features, imputer, window)
        self.opt = dict(lr=lr, beta1=beta1, beta2=beta2, eps=eps, weight_decay=weight_decay)
        self.t = 0

    def param_count(self) -> int:
        return self.spec.size + self.head.size

    def forward_dense(self, dense: np.ndarray, empty: bool = False) -> SingleForward:
        out = cell_forward(self.spec, self.theta[None], dense[None], 0.0, self.h[None], self.c[None])
        if not (np.all(np.isfinite(out.h)) and np.all(np.isfinite(out.c))):
            raise TrainingError("non-finite cell output", instance=self.t)
        logits, cache = self.head.forward(out.h[0])
        return SingleForward(softmax(logits), logits, empty, dense, out, cache, self.t)

    def forward(self, instance: Instance) -> SingleForward:
        return self.forward_dense(self.imputer(instance), instance.empty)

    def gradients(self, fwd: SingleForward, label: int):
        loss, probs, dlogits = softmax_xent(fwd.logits, label)
        g_head, dh = self.head.backward(fwd.head_cache, dlogits)
        grads = cell_backward(self.spec, fwd.cell_out, dh[None], np.zeros((1, self.spec.hidden)))
        return loss, probs, g_head, grads.theta[0]

    def train_step(self, instance, label: int | None = None, fwd: SingleForward | None = None):
        if fwd is None:
            fwd = self.forward(instance)
        label = instance.label if label is None else int(label)
        loss, probs, g_head, g_cell = self.gradients(fwd, label)
        if not (np.isfinite(loss) and np.all(np.isfinite(g_head)) and np.all(np.isfinite(g_cell))):
            raise TrainingError("non-finite gradient", instance=fwd.t)
        self.step += 1
        adamw_rows(self.theta[None], g_cell[None], self.m[None], self.v[None], [self.step], **self.opt)
        self.head.step += 1
        adamw_rows(self.head.theta[None], g_head[None], self.head.m[None], self.head.v[None],
                   [self.head.step], **self.opt)
        self.h = fwd.cell_out.h[0].copy()
        self.c = fwd.cell_out.c[0].copy()
        self.t += 1
        return loss, probs


def single_train_step(model: SingleLSTM, dense: np.ndarray, label: int):
    """Train on an already-imputed dense vector; returns ``(loss, probs)``."""
    fwd = model.forward_dense(np.asarray(dense, dtype=np.float64))
    return model.train_step(None, label, fwd=fwd)
