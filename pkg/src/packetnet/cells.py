"""Single-step recurrent cells with exact one-step gradients.

Every cell operates on a batch of ``B`` independent cells at once (one per
active feature). Parameters of one cell live in a flat float64 vector of
length ``CellSpec.size``; a batch of cells is a ``(B, size)`` array. Weights
that multiply the same operand are fused column-wise, e.g. all recurrent
matrices of a Time-LSTM 3 cell form one ``(s, 4s)`` block, so a forward pass
costs one batched matmul per operand.

Row-vector convention throughout: ``x @ W_x``, ``h @ W_h``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ConfigurationError
from .numerics import sigmoid


class CellKind(str, Enum):
    TIMELSTM3 = "timelstm3"
    TIMELSTM2 = "timelstm2"
    TIMELSTM1 = "timelstm1"
    DECAYLSTM = "decaylstm"
    VANILLALSTM = "vanillalstm"
    GRU = "gru"
    VANILLARNN = "vanillarnn"

    @property
    def has_long_memory(self) -> bool:
        return self not in (CellKind.GRU, CellKind.VANILLARNN)

    @property
    def uses_delta(self) -> bool:
        return self in (CellKind.TIMELSTM3, CellKind.TIMELSTM2, CellKind.TIMELSTM1,
                        CellKind.DECAYLSTM)


# (gates fed by x and carrying a bias, gates fed by h, peephole vectors, delta vectors)
_LAYOUTS = {
    CellKind.TIMELSTM3: (("i", "T1", "T2", "ct", "c", "o"), ("i", "ct", "c", "o"),
                         ("ci", "cto"), ("T1", "T2", "o")),
    CellKind.TIMELSTM2: (("i", "f", "T1", "T2", "ct", "c", "o"), ("i", "f", "ct", "c", "o"),
                         ("ci", "cf", "cto"), ("T1", "T2", "o")),
    CellKind.TIMELSTM1: (("i", "f", "T1", "ct", "o"), ("i", "f", "ct", "o"),
                         ("ci", "cf", "cto"), ("T1", "o")),
    CellKind.DECAYLSTM: (("i", "f", "g", "o"), ("i", "f", "g", "o"), (), ("gamma_w", "gamma_b")),
    CellKind.VANILLALSTM: (("i", "f", "g", "o"), ("i", "f", "g", "o"), (), ()),
    CellKind.GRU: (("u", "r", "n"), ("u", "r", "n"), (), ()),
    CellKind.VANILLARNN: (("h",), ("h",), (), ()),
}


class CellSpec:
    """Parameter layout of one cell kind at a given hidden size and input width."""

    def __init__(self, kind, hidden: int, n_in: int = 1):
        self.kind = CellKind(kind)
        if hidden <= 0 or n_in <= 0:
            raise ConfigurationError("hidden size and input width must be positive")
        self.hidden = s = hidden
        self.n_in = n_in
        x_gates, h_gates, peep, times = _LAYOUTS[self.kind]
        self.x_gates = x_gates
        self.h_gates = h_gates
        self.xi = {g: k for k, g in enumerate(x_gates)}
        self.hi = {g: k for k, g in enumerate(h_gates)}
        entries = [("W_h", (s, len(h_gates) * s)), ("W_x", (n_in, len(x_gates) * s)),
                   ("b", (len(x_gates) * s,))]
        entries += [("w_" + p, (s,)) for p in peep]
        entries += [("t_" + t, (s,)) for t in times]
        self.entries = entries
        self.offsets = {}
        off = 0
        for name, shape in entries:
            n = int(np.prod(shape))
            self.offsets[name] = (off, off + n, shape)
            off += n
        self.size = off

    def __repr__(self):
        return f"CellSpec({self.kind.value!r}, hidden={self.hidden}, n_in={self.n_in})"

    def unpack(self, theta: np.ndarray) -> dict:
        """Named views into a ``(P,)`` or ``(B, P)`` parameter array."""
        lead = theta.shape[:-1]
        return {name: theta[..., a:b].reshape(lead + shape)
                for name, (a, b, shape) in self.offsets.items()}

    def init(self, rng: np.random.Generator) -> np.ndarray:
        """Fresh parameters: weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero."""
        theta = np.zeros(self.size)
        views = self.unpack(theta)
        s = self.hidden
        for name, (_, _, shape) in self.offsets.items():
            if name in ("b", "t_gamma_b"):
                continue
            fan_in = self.n_in if name == "W_x" else s
            bound = 1.0 / np.sqrt(fan_in)
            views[name][...] = rng.uniform(-bound, bound, size=shape)
        return theta


def param_count(kind, hidden: int, n_in: int = 1) -> int:
    return CellSpec(kind, hidden, n_in).size


@dataclass
class CellOutput:
    h: np.ndarray
    c: np.ndarray | None
    kind: CellKind
    cache: dict = field(repr=False, default_factory=dict)


@dataclass
class CellGrads:
    theta: np.ndarray
    x: np.ndarray
    delta: np.ndarray
    h_prev: np.ndarray
    c_in: np.ndarray | None


def _cols(z, k, s):
    return z[:, k * s:(k + 1) * s]


def _prepare(spec, theta, x, delta, h_prev, c_in):
    theta = np.atleast_2d(np.asarray(theta, dtype=np.float64))
    B = theta.shape[0]
    x = np.asarray(x, dtype=np.float64).reshape(B, spec.n_in)
    delta = np.asarray(delta, dtype=np.float64).reshape(B)
    h_prev = np.asarray(h_prev, dtype=np.float64).reshape(B, spec.hidden)
    if c_in is not None:
        c_in = np.broadcast_to(np.asarray(c_in, dtype=np.float64), (B, spec.hidden))
    p = spec.unpack(theta)
    zx = (x[:, None, :] @ p["W_x"])[:, 0, :] + p["b"]
    zh = (h_prev[:, None, :] @ p["W_h"])[:, 0, :]
    return theta, x, delta, h_prev, c_in, p, zx, zh


def _lstm_time_forward(spec, theta, x, delta, h_prev, c_in):
    """Time-LSTM 1/2/3 (they differ only in which gates exist)."""
    kind = spec.kind
    s = spec.hidden
    theta, x, delta, h_prev, c_in, p, zx, zh = _prepare(spec, theta, x, delta, h_prev, c_in)
    xi, hi = spec.xi, spec.hi
    d = delta[:, None]

    def pre(g):
        return _cols(zx, xi[g], s) + _cols(zh, hi[g], s)

    i = sigmoid(pre("i") + c_in * p["w_ci"])
    dT1 = sigmoid(d * p["t_T1"])
    T1 = sigmoid(_cols(zx, xi["T1"], s) + dT1)
    g_ct = np.tanh(pre("ct"))
    cache = dict(x=x, delta=delta, h_prev=h_prev, c_in=c_in, theta=theta,
                 i=i, T1=T1, dT1=dT1, g_ct=g_ct)
    if kind == CellKind.TIMELSTM3:
        dT2 = sigmoid(d * p["t_T2"])
        T2 = sigmoid(_cols(zx, xi["T2"], s) + dT2)
        g_c = np.tanh(pre("c"))
        ct = (1.0 - i * T1) * c_in + i * T1 * g_ct
        c = (1.0 - i) * c_in + i * T2 * g_c
        cache.update(T2=T2, dT2=dT2, g_c=g_c)
    else:
        f = sigmoid(pre("f") + c_in * p["w_cf"])
        ct = f * c_in + i * T1 * g_ct
        cache.update(f=f)
        if kind == CellKind.TIMELSTM2:
            dT2 = sigmoid(d * p["t_T2"])
            T2 = sigmoid(_cols(zx, xi["T2"], s) + dT2)
            g_c = np.tanh(pre("c"))
            c = f * c_in + i * T2 * g_c
            cache.update(T2=T2, dT2=dT2, g_c=g_c)
        else:
            c = ct
    o = sigmoid(pre("o") + d * p["t_o"] + ct * p["w_cto"])
    tct = np.tanh(ct)
    h = o * tct
    cache.update(ct=ct, o=o, tct=tct)
    return CellOutput(h, c, kind, cache)


def _lstm_time_backward(spec, out, dh, dc):
    kind = spec.kind
    s = spec.hidden
    k = out.cache
    theta, x, delta, h_prev, c_in = k["theta"], k["x"], k["delta"], k["h_prev"], k["c_in"]
    p = spec.unpack(theta)
    xi, hi = spec.xi, spec.hi
    B = theta.shape[0]
    d = delta[:, None]
    i, T1, g_ct, ct, o, tct = k["i"], k["T1"], k["g_ct"], k["ct"], k["o"], k["tct"]

    grad = np.zeros_like(theta)
    gv = spec.unpack(grad)
    dzx = np.zeros((B, len(spec.x_gates) * s))
    dzh = np.zeros((B, len(spec.h_gates) * s))

    do = dh * tct
    dct = dh * o * (1.0 - tct * tct)
    da_o = do * o * (1.0 - o)
    dct = dct + da_o * p["w_cto"]
    gv["w_cto"][...] = da_o * ct
    gv["t_o"][...] = da_o * d
    ddelta = (da_o * p["t_o"]).sum(axis=1)

    if kind == CellKind.TIMELSTM1:
        # the emitted long-term memory is the cell state itself
        dct = dct + dc
        dc = np.zeros_like(dct)

    dc_in = np.zeros((B, s))
    di = np.zeros((B, s))
    dT2 = dg_c = None
    if kind == CellKind.TIMELSTM3:
        di += dct * T1 * (g_ct - c_in)
        dT1 = dct * i * (g_ct - c_in)
        dg_ct = dct * i * T1
        dc_in += dct * (1.0 - i * T1)
        T2, g_c = k["T2"], k["g_c"]
        di += dc * (T2 * g_c - c_in)
        dT2 = dc * i * g_c
        dg_c = dc * i * T2
        dc_in += dc * (1.0 - i)
    else:
        f = k["f"]
        df = dct * c_in
        dc_in += dct * f
        di += dct * T1 * g_ct
        dT1 = dct * i * g_ct
        dg_ct = dct * i * T1
        if kind == CellKind.TIMELSTM2:
            T2, g_c = k["T2"], k["g_c"]
            df = df + dc * c_in
            dc_in += dc * f
            di += dc * T2 * g_c
            dT2 = dc * i * g_c
            dg_c = dc * i * T2
        da_f = df * f * (1.0 - f)
        gv["w_cf"][...] = da_f * c_in
        dc_in += da_f * p["w_cf"]
        _cols(dzx, xi["f"], s)[...] = da_f
        _cols(dzh, hi["f"], s)[...] = da_f

    da_i = di * i * (1.0 - i)
    gv["w_ci"][...] = da_i * c_in
    dc_in += da_i * p["w_ci"]
    da_ct = dg_ct * (1.0 - g_ct * g_ct)

    da_T1 = dT1 * T1 * (1.0 - T1)
    sT1 = da_T1 * k["dT1"] * (1.0 - k["dT1"])
    gv["t_T1"][...] = sT1 * d
    ddelta += (sT1 * p["t_T1"]).sum(axis=1)

    for g, da in (("i", da_i), ("ct", da_ct), ("o", da_o)):
        _cols(dzx, xi[g], s)[...] = da
        _cols(dzh, hi[g], s)[...] = da
    _cols(dzx, xi["T1"], s)[...] = da_T1

    if dT2 is not None:
        T2 = k["T2"]
        da_T2 = dT2 * T2 * (1.0 - T2)
        sT2 = da_T2 * k["dT2"] * (1.0 - k["dT2"])
        gv["t_T2"][...] = sT2 * d
        ddelta += (sT2 * p["t_T2"]).sum(axis=1)
        _cols(dzx, xi["T2"], s)[...] = da_T2
        da_c = dg_c * (1.0 - k["g_c"] ** 2)
        _cols(dzx, xi["c"], s)[...] = da_c
        _cols(dzh, hi["c"], s)[...] = da_c

    return _finish(spec, p, gv, grad, dzx, dzh, x, h_prev, ddelta, dc_in, extra_dh=None)


def _finish(spec, p, gv, grad, dzx, dzh, x, h_prev, ddelta, dc_in, extra_dh=None):
    gv["b"][...] = dzx
    gv["W_x"][...] = x[:, :, None] * dzx[:, None, :]
    gv["W_h"][...] = h_prev[:, :, None] * dzh[:, None, :]
    dx = (dzx[:, None, :] @ np.swapaxes(p["W_x"], 1, 2))[:, 0, :]
    dh_prev = (dzh[:, None, :] @ np.swapaxes(p["W_h"], 1, 2))[:, 0, :]
    if extra_dh is not None:
        dh_prev = dh_prev + extra_dh
    return CellGrads(grad, dx, ddelta, dh_prev, dc_in)


def _lstm_forward(spec, theta, x, delta, h_prev, c_in):
    """Plain LSTM; with the decay kind the incoming short-term memory is attenuated first."""
    s = spec.hidden
    decay = spec.kind == CellKind.DECAYLSTM
    theta = np.atleast_2d(np.asarray(theta, dtype=np.float64))
    B = theta.shape[0]
    p = spec.unpack(theta)
    h_raw = np.asarray(h_prev, dtype=np.float64).reshape(B, s)
    delta = np.asarray(delta, dtype=np.float64).reshape(B)
    if decay:
        zg = delta[:, None] * p["t_gamma_w"] + p["t_gamma_b"]
        gamma = np.exp(-np.maximum(zg, 0.0))
        h_in = gamma * h_raw
    else:
        zg = gamma = None
        h_in = h_raw
    theta, x, delta, h_in, c_in, p, zx, zh = _prepare(spec, theta, x, delta, h_in, c_in)
    xi = spec.xi
    i = sigmoid(_cols(zx, xi["i"], s) + _cols(zh, xi["i"], s))
    f = sigmoid(_cols(zx, xi["f"], s) + _cols(zh, xi["f"], s))
    g = np.tanh(_cols(zx, xi["g"], s) + _cols(zh, xi["g"], s))
    o = sigmoid(_cols(zx, xi["o"], s) + _cols(zh, xi["o"], s))
    c = f * c_in + i * g
    tc = np.tanh(c)
    h = o * tc
    cache = dict(theta=theta, x=x, delta=delta, h_raw=h_raw, h_in=h_in, c_in=c_in,
                 zg=zg, gamma=gamma, i=i, f=f, g=g, o=o, c=c, tc=tc)
    return CellOutput(h, c, spec.kind, cache)


def _lstm_backward(spec, out, dh, dc):
    s = spec.hidden
    k = out.cache
    theta, x, delta = k["theta"], k["x"], k["delta"]
    p = spec.unpack(theta)
    B = theta.shape[0]
    grad = np.zeros_like(theta)
    gv = spec.unpack(grad)
    i, f, g, o, c_in, tc = k["i"], k["f"], k["g"], k["o"], k["c_in"], k["tc"]
    do = dh * tc
    dcc = dc + dh * o * (1.0 - tc * tc)
    dzx = np.empty((B, 4 * s))
    xi = spec.xi
    _cols(dzx, xi["i"], s)[...] = dcc * g * i * (1.0 - i)
    _cols(dzx, xi["f"], s)[...] = dcc * c_in * f * (1.0 - f)
    _cols(dzx, xi["g"], s)[...] = dcc * i * (1.0 - g * g)
    _cols(dzx, xi["o"], s)[...] = do * o * (1.0 - o)
    dc_in = dcc * f
    res = _finish(spec, p, gv, grad, dzx, dzx, x, k["h_in"], np.zeros(B), dc_in)
    if spec.kind == CellKind.DECAYLSTM:
        dh_in = res.h_prev
        dgamma = dh_in * k["h_raw"]
        dzg = -dgamma * k["gamma"] * (k["zg"] > 0)
        gv["t_gamma_w"][...] = dzg * delta[:, None]
        gv["t_gamma_b"][...] = dzg
        res.delta = (dzg * p["t_gamma_w"]).sum(axis=1)
        res.h_prev = dh_in * k["gamma"]
    return res


def _gru_forward(spec, theta, x, delta, h_prev, c_in=None):
    s = spec.hidden
    theta, x, delta, h_prev, _, p, zx, zh = _prepare(spec, theta, x, delta, h_prev, None)
    u = sigmoid(_cols(zx, 0, s) + _cols(zh, 0, s))
    r = sigmoid(_cols(zx, 1, s) + _cols(zh, 1, s))
    q = _cols(zh, 2, s)
    n = np.tanh(_cols(zx, 2, s) + r * q)
    h = u * h_prev + (1.0 - u) * n
    cache = dict(theta=theta, x=x, delta=delta, h_prev=h_prev, u=u, r=r, q=q, n=n)
    return CellOutput(h, None, spec.kind, cache)


def _gru_backward(spec, out, dh, dc=None):
    k = out.cache
    theta, x, h_prev = k["theta"], k["x"], k["h_prev"]
    p = spec.unpack(theta)
    B = theta.shape[0]
    grad = np.zeros_like(theta)
    gv = spec.unpack(grad)
    u, r, q, n = k["u"], k["r"], k["q"], k["n"]
    du = dh * (h_prev - n)
    da_n = dh * (1.0 - u) * (1.0 - n * n)
    da_u = du * u * (1.0 - u)
    da_r = da_n * q * r * (1.0 - r)
    dzx = np.concatenate([da_u, da_r, da_n], axis=1)
    dzh = np.concatenate([da_u, da_r, da_n * r], axis=1)
    return _finish(spec, p, gv, grad, dzx, dzh, x, h_prev, np.zeros(B), None,
                   extra_dh=dh * u)


def _rnn_forward(spec, theta, x, delta, h_prev, c_in=None):
    theta, x, delta, h_prev, _, p, zx, zh = _prepare(spec, theta, x, delta, h_prev, None)
    h = np.tanh(zx + zh)
    return CellOutput(h, None, spec.kind, dict(theta=theta, x=x, delta=delta, h_prev=h_prev, h=h))


def _rnn_backward(spec, out, dh, dc=None):
    k = out.cache
    theta = k["theta"]
    p = spec.unpack(theta)
    grad = np.zeros_like(theta)
    gv = spec.unpack(grad)
    da = dh * (1.0 - k["h"] ** 2)
    return _finish(spec, p, gv, grad, da, da, k["x"], k["h_prev"],
                   np.zeros(theta.shape[0]), None)


_FORWARD = {
    CellKind.TIMELSTM3: _lstm_time_forward,
    CellKind.TIMELSTM2: _lstm_time_forward,
    CellKind.TIMELSTM1: _lstm_time_forward,
    CellKind.DECAYLSTM: _lstm_forward,
    CellKind.VANILLALSTM: _lstm_forward,
    CellKind.GRU: _gru_forward,
    CellKind.VANILLARNN: _rnn_forward,
}
_BACKWARD = {
    CellKind.TIMELSTM3: _lstm_time_backward,
    CellKind.TIMELSTM2: _lstm_time_backward,
    CellKind.TIMELSTM1: _lstm_time_backward,
    CellKind.DECAYLSTM: _lstm_backward,
    CellKind.VANILLALSTM: _lstm_backward,
    CellKind.GRU: _gru_backward,
    CellKind.VANILLARNN: _rnn_backward,
}


def cell_forward(spec: CellSpec, theta, x, delta, h_prev, c_in=None) -> CellOutput:
    """One step for a batch of cells.

    ``theta`` is ``(B, P)``; ``x`` is ``(B, n_in)``; ``delta`` is ``(B,)``;
    ``h_prev`` is ``(B, s)``; ``c_in`` is ``(s,)`` (shared) or ``(B, s)`` and is
    ignored by GRU and vanilla RNN cells. Unbatched inputs are accepted and
    treated as ``B = 1``.
    """
    if spec.kind.has_long_memory and c_in is None:
        c_in = np.zeros(spec.hidden)
    return _FORWARD[spec.kind](spec, theta, x, delta, h_prev, c_in)


def cell_backward(spec: CellSpec, out: CellOutput, dh, dc=None) -> CellGrads:
    """Exact gradients of one step given upstream ``dh`` (and ``dc``)."""
    if out.kind != spec.kind or "theta" not in out.cache:
        raise RuntimeError(f"cache from {out.kind} does not match {spec.kind}")
    dh = np.asarray(dh, dtype=np.float64).reshape(out.h.shape)
    if spec.kind.has_long_memory:
        dc = np.zeros_like(out.h) if dc is None else np.asarray(dc, dtype=np.float64).reshape(out.h.shape)
    return _BACKWARD[spec.kind](spec, out, dh, dc)


def _step(kind):
    def step(spec, theta, x, delta, h_prev, c_in=None):
        if CellKind(kind) != spec.kind:
            raise ConfigurationError(f"{spec!r} is not a {kind} cell")
        return cell_forward(spec, theta, x, delta, h_prev, c_in)
    step.__name__ = f"step_{kind}"
    return step


step_time_lstm3 = _step("timelstm3")
step_time_lstm2 = _step("timelstm2")
step_time_lstm1 = _step("timelstm1")
step_decay_lstm = _step("decaylstm")
step_vanilla_lstm = _step("vanillalstm")
step_gru = _step("gru")
step_rnn = _step("vanillarnn")
