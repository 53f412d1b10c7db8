"""Finite-difference verification of the analytic gradients.

Used by the test-suite and by ``packetnet gradcheck``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cells import CellKind, CellSpec, cell_backward, cell_forward
from .numerics import finite_diff_grad, make_rng, softmax_xent
from .packet import PacketConfig, PacketModel
from .streams import Instance

RTOL = 1e-4
ATOL = 1e-7
FD_EPS = 1e-5


def grad_mismatch(analytic, numeric, rtol=RTOL, atol=ATOL) -> float:
    """Largest violation ratio; <= 1 means every coordinate is within tolerance."""
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    numeric = np.asarray(numeric, dtype=np.float64).ravel()
    allowed = np.maximum(rtol * np.maximum(np.abs(analytic), np.abs(numeric)), atol)
    if analytic.size == 0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric) / allowed))


@dataclass
class CheckResult:
    name: str
    draws: int
    worst: float

    @property
    def ok(self) -> bool:
        return self.worst <= 1.0


def random_cell_case(kind, rng, hidden=None, batch=None):
    kind = CellKind(kind)
    s = hidden or int(rng.integers(2, 7))
    B = batch or int(rng.integers(1, 4))
    spec = CellSpec(kind, s)
    while True:
        theta = rng.normal(0.0, 0.6, size=(B, spec.size))
        x = rng.normal(size=(B, 1))
        delta = rng.integers(0, 8, size=B).astype(np.float64)
        h_prev = rng.uniform(-1, 1, size=(B, s))
        c_in = rng.normal(size=s)
        if kind != CellKind.DECAYLSTM:
            break
        p = spec.unpack(theta)
        z = delta[:, None] * p["t_gamma_w"] + p["t_gamma_b"]
        if np.min(np.abs(z)) > 1e-2:
            break  # keep finite differences away from the max(0, .) kink
    wh = rng.normal(size=(B, s))
    wc = rng.normal(size=(B, s))
    return spec, theta, x, delta, h_prev, c_in, wh, wc


def check_cell_case(spec, theta, x, delta, h_prev, c_in, wh, wc) -> float:
    has_c = spec.kind.has_long_memory

    def loss(theta=theta, x=x, delta=delta, h_prev=h_prev, c_in=c_in):
        out = cell_forward(spec, theta, x, delta, h_prev, c_in)
        val = np.sum(out.h * wh)
        if has_c:
            val += np.sum(out.c * wc)
        return float(val)

    out = cell_forward(spec, theta, x, delta, h_prev, c_in)
    g = cell_backward(spec, out, wh, wc if has_c else None)
    worst = 0.0
    pairs = [("theta", theta, g.theta), ("x", x, g.x), ("delta", delta, g.delta),
             ("h_prev", h_prev, g.h_prev)]
    if has_c:
        pairs.append(("c_in", c_in, g.c_in.sum(axis=0)))
    for name, value, analytic in pairs:
        numeric = finite_diff_grad(lambda v: loss(**{name: v}), value, FD_EPS)
        worst = max(worst, grad_mismatch(analytic, numeric))
    return worst


def check_cells(draws: int = 100, seed: int = 0, kinds=tuple(CellKind)) -> list[CheckResult]:
    rng = make_rng(seed)
    results = []
    for kind in kinds:
        worst = 0.0
        for _ in range(draws):
            worst = max(worst, check_cell_case(*random_cell_case(kind, rng)))
        results.append(CheckResult(CellKind(kind).value, draws, worst))
    return results


def check_packet(kind=CellKind.TIMELSTM3, aggregator="max", feat_space="current",
                 concat="both", hidden=4, seed=0, warmup=6) -> CheckResult:
    """End-to-end check: loss of one instance vs the active cells' and head parameters."""
    cfg = PacketConfig(cell=kind, hidden=hidden, aggregator=aggregator, feat_space=feat_space,
                       concat=concat, lr=0.01)
    model = PacketModel(cfg, seed=seed)
    rng = make_rng(seed + 1)
    for t in range(warmup):
        ids = np.flatnonzero(rng.random(5) < 0.6) + 1
        model.train_step(Instance(t, ids, rng.normal(size=len(ids)), int(rng.integers(2))))
    inst = Instance(warmup, np.array([1, 3, 4, 5]), rng.normal(size=4), 1)
    fwd = model.forward(inst)
    _, _, g_head, g_cells = model.gradients(fwd, inst.label)
    rows = fwd.rows.copy()
    bank = model.bank

    def loss_cells(theta):
        saved = bank.theta[rows].copy()
        bank.theta[rows] = theta
        try:
            return softmax_xent(model.forward(inst).logits, inst.label)[0]
        finally:
            bank.theta[rows] = saved

    def loss_head(theta):
        saved = model.head.theta.copy()
        model.head.theta[:] = theta
        try:
            return softmax_xent(model.forward(inst).logits, inst.label)[0]
        finally:
            model.head.theta[:] = saved

    worst = grad_mismatch(g_cells, finite_diff_grad(loss_cells, bank.theta[rows], FD_EPS))
    worst = max(worst, grad_mismatch(g_head, finite_diff_grad(loss_head, model.head.theta, FD_EPS)))
    name = f"packet[{CellKind(kind).value},{aggregator},{feat_space},{concat}]"
    return CheckResult(name, 1, worst)
