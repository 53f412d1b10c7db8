"""The packet model: one recurrent cell per feature plus shared memories.

Slots are stored row-wise in a growable bank so that the cells active in an
instance are gathered, stepped, differentiated and updated as one batch.
Memories carried over from earlier instances enter the backward pass as
constants (gradients flow through the current step only).
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, replace

import numpy as np

from .cells import CellKind, CellSpec, cell_backward, cell_forward
from .errors import CapacityError, ConfigurationError, TrainingError
from .numerics import adamw_bank, adamw_rows, make_rng, relu, softmax, softmax_xent
from .streams import Instance

log = logging.getLogger(__name__)

AGGREGATORS = ("mean", "sum", "min", "max")
FEAT_SPACES = ("current", "universal")
CONCAT_MODES = ("both", "only_ltm", "only_stm")


@dataclass
class PacketConfig:
    cell: CellKind = CellKind.TIMELSTM3
    hidden: int = 64
    aggregator: str = "max"
    feat_space: str = "current"
    concat: str = "both"
    lr: float = 0.0006
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    max_cells: int | None = None   # l_f: pool size limit for the drop policy
    min_seen: int | None = None    # i_l: appearances before a slot may be dropped
    n_classes: int = 2

    def __post_init__(self):
        try:
            self.cell = CellKind(self.cell)
        except ValueError:
            raise ConfigurationError(f"cell: unknown kind {self.cell!r}") from None
        if self.hidden <= 0:
            raise ConfigurationError("hidden: must be positive")
        if self.aggregator not in AGGREGATORS:
            raise ConfigurationError(f"aggregator: expected one of {AGGREGATORS}")
        if self.feat_space not in FEAT_SPACES:
            raise ConfigurationError(f"feat_space: expected one of {FEAT_SPACES}")
        if self.concat not in CONCAT_MODES:
            raise ConfigurationError(f"concat: expected one of {CONCAT_MODES}")
        if not self.cell.has_long_memory and self.concat != "only_stm":
            # GRU / RNN cells carry no long-term memory to feed the head
            self.concat = "only_stm"
        if self.lr <= 0:
            raise ConfigurationError("lr: must be positive")
        if (self.max_cells is None) != (self.min_seen is None):
            raise ConfigurationError("max_cells and min_seen must be set together")
        if self.max_cells is not None and (self.max_cells <= 0 or self.min_seen <= 0):
            raise ConfigurationError("max_cells and min_seen must be positive")

    @property
    def head_input(self) -> int:
        return 2 * self.hidden if self.concat == "both" else self.hidden

    def to_dict(self) -> dict:
        d = asdict(self)
        d["cell"] = self.cell.value
        return d


def aggregate(vectors: np.ndarray, op: str) -> np.ndarray:
    """Element-wise reduction over the rows of ``vectors`` (shape ``(B, s)``)."""
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.ndim != 2 or vectors.shape[0] == 0:
        raise ValueError("aggregate needs a nonempty (B, s) array")
    if op == "mean":
        return vectors.mean(axis=0)
    if op == "sum":
        return vectors.sum(axis=0)
    if op == "max":
        return vectors.max(axis=0)
    if op == "min":
        return vectors.min(axis=0)
    raise ConfigurationError(f"unknown aggregator {op!r}")


def aggregate_backward(vectors: np.ndarray, op: str, dout: np.ndarray) -> np.ndarray:
    """Distribute ``dout`` over the rows; min/max route to the first winning row."""
    B, s = vectors.shape
    if op == "mean":
        return np.broadcast_to(dout / B, (B, s)).copy()
    if op == "sum":
        return np.broadcast_to(dout, (B, s)).copy()
    win = vectors.argmax(axis=0) if op == "max" else vectors.argmin(axis=0)
    grad = np.zeros((B, s))
    grad[win, np.arange(s)] = dout
    return grad


class Head:
    """Two-layer classifier ``affine -> relu -> affine`` with flat parameters."""

    def __init__(self, n_in: int, hidden: int, n_classes: int, rng=None, zero=False):
        self.n_in, self.hidden, self.n_classes = n_in, hidden, n_classes
        self.size = n_in * hidden + hidden + hidden * n_classes + n_classes
        self.theta = np.zeros(self.size)
        if rng is not None and not zero:
            w1, _, w2, _ = self._views(self.theta)
            w1[...] = rng.uniform(-1, 1, size=w1.shape) / np.sqrt(n_in)
            w2[...] = rng.uniform(-1, 1, size=w2.shape) / np.sqrt(hidden)
        self.m = np.zeros(self.size)
        self.v = np.zeros(self.size)
        self.step = 0

    def _views(self, flat):
        a = self.n_in * self.hidden
        b = a + self.hidden
        c = b + self.hidden * self.n_classes
        return (flat[:a].reshape(self.n_in, self.hidden), flat[a:b],
                flat[b:c].reshape(self.hidden, self.n_classes), flat[c:])

    def forward(self, z: np.ndarray):
        w1, b1, w2, b2 = self._views(self.theta)
        pre = z @ w1 + b1
        a = relu(pre)
        return a @ w2 + b2, (z, pre, a)

    def backward(self, cache, dlogits):
        z, pre, a = cache
        w1, _, w2, _ = self._views(self.theta)
        grad = np.zeros(self.size)
        g1, gb1, g2, gb2 = self._views(grad)
        g2[...] = np.outer(a, dlogits)
        gb2[...] = dlogits
        dpre = (dlogits @ w2.T) * (pre > 0)
        g1[...] = np.outer(z, dpre)
        gb1[...] = dpre
        return grad, dpre @ w1.T


class SlotBank:
    """Per-feature parameters, optimizer moments and memories, one row per slot."""

    def __init__(self, spec: CellSpec, capacity: int = 8):
        self.spec = spec
        P, s = spec.size, spec.hidden
        self.theta = np.zeros((capacity, P))
        self.m = np.zeros((capacity, P))
        self.v = np.zeros((capacity, P))
        self.step = np.zeros(capacity, dtype=np.int64)
        self.h = np.zeros((capacity, s))
        self.last_seen = np.full(capacity, -1, dtype=np.int64)
        self.seen = np.zeros(capacity, dtype=np.int64)
        self.ids = np.zeros(capacity, dtype=np.int64)
        self.n = 0
        self.row_of: dict[int, int] = {}
        self._order = None

    _ARRAYS = ("theta", "m", "v", "step", "h", "last_seen", "seen", "ids")

    def __len__(self):
        return self.n

    def _grow(self):
        cap = len(self.ids)
        if self.n < cap:
            return
        for name in self._ARRAYS:
            arr = getattr(self, name)
            fill = -1 if name == "last_seen" else 0
            pad = np.full((cap,) + arr.shape[1:], fill, dtype=arr.dtype)
            setattr(self, name, np.concatenate([arr, pad]))

    def add(self, feature: int, theta: np.ndarray) -> int:
        self._grow()
        r = self.n
        self.theta[r] = theta
        self.m[r] = 0.0
        self.v[r] = 0.0
        self.step[r] = 0
        self.h[r] = 0.0
        self.last_seen[r] = -1
        self.seen[r] = 0
        self.ids[r] = feature
        self.row_of[feature] = r
        self.n += 1
        self._order = None
        return r

    def remove(self, feature: int):
        r = self.row_of.pop(feature)
        last = self.n - 1
        if r != last:
            for name in self._ARRAYS:
                arr = getattr(self, name)
                arr[r] = arr[last]
            self.row_of[int(self.ids[r])] = r
        self.n -= 1
        self._order = None

    def rows_by_id(self) -> np.ndarray:
        """All occupied rows ordered by feature id."""
        if self._order is None:
            self._order = np.argsort(self.ids[:self.n], kind="stable")
        return self._order


@dataclass
class ForwardResult:
    probs: np.ndarray
    logits: np.ndarray
    empty: bool
    ids: np.ndarray = None
    rows: np.ndarray = None
    deltas: np.ndarray = None
    cell_out: object = None
    c_stack: np.ndarray = None
    h_stack: np.ndarray = None
    h_active_pos: np.ndarray = None
    c_new: np.ndarray = None
    h_pred: np.ndarray = None
    head_cache: tuple = None
    t: int = 0


class PacketModel:
    """Dynamic pool of per-feature cells with a common long-term memory and a head."""

    def __init__(self, config: PacketConfig | None = None, seed: int = 0, **overrides):
        config = config or PacketConfig()
        if overrides:
            config = replace(config, **overrides)
        self.config = config
        self.seed = seed
        self.spec = CellSpec(config.cell, config.hidden, 1)
        self._reset(make_rng(seed))

    def _reset(self, rng, t=0):
        cfg = self.config
        self.rng = rng
        self.head = Head(cfg.head_input, cfg.hidden, cfg.n_classes, rng)
        self.bank = SlotBank(self.spec)
        self.c = np.zeros(cfg.hidden)
        self.h = np.zeros(cfg.hidden)
        self.t = t

    # -- pool management -------------------------------------------------

    def __len__(self):
        return len(self.bank)

    @property
    def features(self) -> list[int]:
        return sorted(self.bank.row_of)

    def slot(self, feature: int) -> dict:
        r = self.bank.row_of[feature]
        b = self.bank
        last = int(b.last_seen[r])
        return dict(feature=feature, theta=b.theta[r], h=b.h[r], step=int(b.step[r]),
                    last_seen=None if last < 0 else last, seen_count=int(b.seen[r]))

    def ensure_slot(self, feature: int) -> int:
        """Row of ``feature``, creating a freshly initialised slot if needed."""
        feature = int(feature)
        r = self.bank.row_of.get(feature)
        if r is None:
            r = self.bank.add(feature, self.spec.init(self.rng))
        return r

    def drop_slots(self, protect=()) -> list[int]:
        """Apply the KL-divergence drop policy until the pool fits ``max_cells``.

        Among slots seen at least ``min_seen`` times (and not in ``protect``),
        repeatedly drops the one whose stored short-term memory is closest to
        the common long-term memory, with both mapped through softmax.
        """
        cfg = self.config
        if cfg.max_cells is None:
            return []
        dropped = []
        protect = set(int(j) for j in protect)
        log_q = np.log(softmax(self.c))
        while len(self.bank) > cfg.max_cells:
            b = self.bank
            order = b.rows_by_id()
            cand = [r for r in order if b.seen[r] >= cfg.min_seen and int(b.ids[r]) not in protect]
            if not cand:
                raise CapacityError(
                    f"pool holds {len(b)} slots > limit {cfg.max_cells} and none is droppable")
            cand = np.array(cand)
            p = softmax(b.h[cand])
            kl = (p * (np.log(p) - log_q)).sum(axis=1)
            victim = int(b.ids[cand[int(np.argmin(kl))]])
            b.remove(victim)
            dropped.append(victim)
        return dropped

    def reinitialize(self, seed: int | None = None, t: int | None = None):
        """Discard every slot and memory; re-seed the head. Configuration is kept."""
        self.seed = self.seed if seed is None else seed
        self._reset(make_rng(self.seed), self.t if t is None else t)
        return self

    def param_count(self) -> int:
        return len(self.bank) * self.spec.size + self.head.size

    # -- forward / train -------------------------------------------------

    def _head_input(self, c, h):
        mode = self.config.concat
        if mode == "both":
            return np.concatenate([c, h])
        return c if mode == "only_ltm" else h

    def forward(self, instance: Instance) -> ForwardResult:
        cfg = self.config
        t = self.t
        if instance.empty:
            logits, cache = self.head.forward(self._head_input(self.c, self.h))
            return ForwardResult(softmax(logits), logits, True, head_cache=cache, t=t,
                                 c_new=self.c, h_pred=self.h)

        order = np.argsort(instance.ids, kind="stable")
        ids = instance.ids[order]
        x = instance.values[order]
        new = [j for j in ids.tolist() if j not in self.bank.row_of]
        for j in new:
            self.ensure_slot(j)
        if new and cfg.max_cells is not None and len(self.bank) > cfg.max_cells:
            try:
                self.drop_slots(protect=ids.tolist())
            except CapacityError as exc:
                log.warning("instance %d: %s", t, exc)
        b = self.bank
        rows = np.fromiter((b.row_of[j] for j in ids.tolist()), dtype=np.int64, count=len(ids))
        last = b.last_seen[rows]
        deltas = np.where(last >= 0, t - last, 0).astype(np.float64)
        out = cell_forward(self.spec, b.theta[rows], x[:, None], deltas, b.h[rows],
                           self.c if cfg.cell.has_long_memory else None)
        if not (np.all(np.isfinite(out.h)) and (out.c is None or np.all(np.isfinite(out.c)))):
            bad = ~np.isfinite(out.h).all(axis=1)
            if out.c is not None:
                bad |= ~np.isfinite(out.c).all(axis=1)
            raise TrainingError("non-finite cell output", instance=t,
                                feature=int(ids[np.flatnonzero(bad)[0]]))

        c_new = aggregate(out.c, cfg.aggregator) if out.c is not None else self.c
        if cfg.feat_space == "universal":
            all_rows = b.rows_by_id()
            h_stack = b.h[all_rows].copy()
            pos = np.searchsorted(b.ids[all_rows], ids)
            h_stack[pos] = out.h
        else:
            h_stack, pos = out.h, np.arange(len(ids))
        h_pred = aggregate(h_stack, cfg.aggregator)
        logits, cache = self.head.forward(self._head_input(c_new, h_pred))
        return ForwardResult(softmax(logits), logits, False, ids=ids, rows=rows, deltas=deltas,
                             cell_out=out, c_stack=out.c, h_stack=h_stack, h_active_pos=pos,
                             c_new=c_new, h_pred=h_pred, head_cache=cache, t=t)

    def predict_proba(self, instance: Instance) -> np.ndarray:
        return self.forward(instance).probs

    def gradients(self, fwd: ForwardResult, label: int):
        """Loss and gradients (head, active-cell rows) for a forward result."""
        cfg = self.config
        loss, probs, dlogits = softmax_xent(fwd.logits, label)
        if not np.isfinite(loss):
            raise TrainingError("non-finite loss", instance=fwd.t)
        g_head, dz = self.head.backward(fwd.head_cache, dlogits)
        if fwd.empty:
            return loss, probs, g_head, None
        s = cfg.hidden
        if cfg.concat == "both":
            dc_new, dh_pred = dz[:s], dz[s:]
        elif cfg.concat == "only_ltm":
            dc_new, dh_pred = dz, None
        else:
            dc_new, dh_pred = None, dz
        B = len(fwd.rows)
        dh = np.zeros((B, s))
        if dh_pred is not None:
            dh = aggregate_backward(fwd.h_stack, cfg.aggregator, dh_pred)[fwd.h_active_pos]
        dc = None
        if fwd.c_stack is not None:
            dc = (aggregate_backward(fwd.c_stack, cfg.aggregator, dc_new)
                  if dc_new is not None else np.zeros((B, s)))
        grads = cell_backward(self.spec, fwd.cell_out, dh, dc)
        return loss, probs, g_head, grads.theta

    def train_step(self, instance: Instance, label: int | None = None,
                   fwd: ForwardResult | None = None):
        """Predict-then-update on one instance; returns ``(loss, probs)``."""
        cfg = self.config
        label = instance.label if label is None else int(label)
        if fwd is None:
            fwd = self.forward(instance)
        loss, probs, g_head, g_cells = self.gradients(fwd, label)
        if not np.all(np.isfinite(g_head)) or (g_cells is not None and not np.all(np.isfinite(g_cells))):
            raise TrainingError("non-finite gradient", instance=fwd.t)
        opt = dict(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps,
                   weight_decay=cfg.weight_decay)
        hd = self.head
        hd.step += 1
        adamw_rows(hd.theta[None], g_head[None], hd.m[None], hd.v[None], [hd.step], **opt)
        if not fwd.empty:
            b = self.bank
            rows = fwd.rows
            adamw_bank(b.theta, g_cells, b.m, b.v, b.step, rows, **opt)
            b.h[rows] = fwd.cell_out.h
            b.last_seen[rows] = fwd.t
            b.seen[rows] += 1
            self.c = fwd.c_new
            self.h = fwd.h_pred
        self.t += 1
        return loss, probs

    # -- state -----------------------------------------------------------

    def state(self) -> dict:
        b = self.bank
        n = b.n
        arrays = {f"bank_{k}": getattr(b, k)[:n].copy() for k in SlotBank._ARRAYS}
        arrays.update(head_theta=self.head.theta.copy(), head_m=self.head.m.copy(),
                      head_v=self.head.v.copy(), c=self.c.copy(), h=self.h.copy())
        meta = dict(config=self.config.to_dict(), seed=self.seed, t=self.t,
                    head_step=self.head.step, rng=self.rng.bit_generator.state)
        return dict(arrays=arrays, meta=meta)

    @classmethod
    def from_state(cls, state: dict) -> "PacketModel":
        meta, arrays = state["meta"], state["arrays"]
        model = cls(PacketConfig(**meta["config"]), seed=meta["seed"])
        model.rng.bit_generator.state = meta["rng"]
        model.t = meta["t"]
        model.head.theta[:] = arrays["head_theta"]
        model.head.m[:] = arrays["head_m"]
        model.head.v[:] = arrays["head_v"]
        model.head.step = meta["head_step"]
        model.c = arrays["c"].copy()
        model.h = arrays["h"].copy()
        b = model.bank
        n = len(arrays["bank_ids"])
        while len(b.ids) < n:
            b.n = len(b.ids)
            b._grow()
        for k in SlotBank._ARRAYS:
            getattr(b, k)[:n] = arrays[f"bank_{k}"]
        b.n = n
        b.row_of = {int(j): r for r, j in enumerate(arrays["bank_ids"])}
        b._order = None
        return model


def head_param_count(hidden: int, n_classes: int = 2, concat: str = "both") -> int:
    n_in = 2 * hidden if concat == "both" else hidden
    return n_in * hidden + hidden + hidden * n_classes + n_classes


def packet_param_count(n_slots: int, kind=CellKind.TIMELSTM3, hidden: int = 64,
                       n_classes: int = 2, concat: str = "both") -> int:
    return n_slots * CellSpec(kind, hidden).size + head_param_count(hidden, n_classes, concat)
