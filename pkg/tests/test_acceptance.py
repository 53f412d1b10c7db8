"""Acceptance checks, one pass/fail line per criterion.

The magic04 criteria share one cache of prequential runs, so the whole
module takes roughly 15-20 minutes on a single core. HIGGS is not bundled:
point ``PACKETNET_HIGGS`` at a local ``HIGGS.csv`` (or ``.csv.gz``) to
evaluate criterion 7; without it the criterion reports FAIL.
"""
import os
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, MAGIC, random_stream
from packetnet.cells import CellKind, param_count
from packetnet.checkpoint import load_checkpoint, save_checkpoint
from packetnet.cli import RunConfig, interval_reset, load_records, make_model, make_stream
from packetnet.evaluation import MetricReport, auprc, auroc, interval_report, run_prequential
from packetnet.gradcheck import check_cells
from packetnet.normalize import Normalizer, StreamingStats, stats_merge_check
from packetnet.packet import AGGREGATORS, PacketConfig, PacketModel, aggregate, packet_param_count
from packetnet.streams import Instance

SEEDS = (0, 1, 2)
HIGGS_PREFIX = 250_000

# pinned tolerances
GRAD_DRAWS, GRAD_BUDGET_S = 100, 60.0
CENSUS_CELL, CENSUS_TOTAL, CENSUS_RTOL = 17_472, 183_170, 0.01
ORACLE_TOL, WELFORD_RTOL, WELFORD_N = 1e-12, 1e-9, 100_000
BACC_FLOOR = {0.5: 66.0, 0.75: 71.0, 0.25: 59.0}
BASELINE_GAP = 5.0
TIME_GAP, UNIT_GAP = 1.5, 8.0
FORGET_GAP = 0.0
RUN_BUDGET_S = 600.0

_runs = {}


def report(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def magic_config(**kw):
    base = dict(dataset=str(MAGIC), positive_label="g", shuffle=True, data_seed=0,
                schedule="bernoulli", p=0.5, normalizer="zscore", model="packet",
                cell="timelstm3", hidden_size=64, aggregate_by="max", lr=0.0006)
    base.update(kw)
    return RunConfig(**base).validate()


def magic_run(seed, **kw):
    """bAcc (percent) and wall seconds of one full magic04 run, cached per session."""
    key = (seed, tuple(sorted(kw.items())))
    if key not in _runs:
        cfg = magic_config(**kw)
        data = load_records(cfg)
        stream = make_stream(cfg, data)
        model = make_model(cfg, seed, n_features=len(data[0].values))
        began = time.perf_counter()
        rec = run_prequential(model, stream, Normalizer(cfg.normalizer), cfg.intervals)
        wall = time.perf_counter() - began
        _runs[key] = (MetricReport.from_record(rec).balanced_accuracy * 100, wall)
    return _runs[key]


def mean_bacc(**kw):
    return float(np.mean([magic_run(s, **kw)[0] for s in SEEDS]))


def per_seed(**kw):
    return "/".join(f"{magic_run(s, **kw)[0]:.2f}" for s in SEEDS)


def test_criterion_1_gradient_fidelity():
    began = time.perf_counter()
    results = check_cells(GRAD_DRAWS, seed=2024)
    took = time.perf_counter() - began
    worst = max(r.worst for r in results)
    ok = all(r.ok for r in results) and took < GRAD_BUDGET_S
    report(1, ok, f"{len(results)} kinds x {GRAD_DRAWS} draws, worst ratio {worst:.3g} "
                  f"(<=1), {took:.1f}s (<{GRAD_BUDGET_S:.0f}s)")


def test_criterion_2_parameter_census():
    cell = param_count(CellKind.TIMELSTM3, 64)
    total = packet_param_count(10, CellKind.TIMELSTM3, 64)
    rel = abs(total - CENSUS_TOTAL) / CENSUS_TOTAL
    report(2, cell == CENSUS_CELL and rel <= CENSUS_RTOL,
           f"cell {cell} (want {CENSUS_CELL}), packet {total} vs {CENSUS_TOTAL} "
           f"(rel {rel:.2e} <= {CENSUS_RTOL})")


def _auroc_pairs(s, y):
    pos, neg = s[y == 1], s[y == 0]
    diff = pos[:, None] - neg[None, :]
    return float(((diff > 0) + 0.5 * (diff == 0)).sum() / (len(pos) * len(neg)))


def _auprc_thresholds(s, y):
    ap, prev = 0.0, 0.0
    for thr in np.unique(s)[::-1]:
        sel = s >= thr
        recall = y[sel].sum() / y.sum()
        ap += (recall - prev) * y[sel].mean()
        prev = recall
    return float(ap)


def test_criterion_3_metric_oracles():
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(20):
        s = np.round(rng.random(500), 2)
        y = (rng.random(500) < rng.uniform(0.2, 0.8)).astype(int)
        worst = max(worst, abs(auroc(s, y) - _auroc_pairs(s, y)),
                    abs(auprc(s, y) - _auprc_thresholds(s, y)))
    stats, hist = StreamingStats(), {1: rng.normal(3, 2, WELFORD_N), 2: rng.uniform(-5, 9, WELFORD_N)}
    ids = np.array([1, 2])
    for a, b in zip(hist[1], hist[2]):
        stats.update(ids, np.array([a, b]))
    welford_ok = stats_merge_check(stats, hist, rtol=WELFORD_RTOL)
    report(3, worst <= ORACLE_TOL and welford_ok,
           f"rank-metric max deviation {worst:.1e} (<= {ORACLE_TOL}); "
           f"Welford vs batch on {WELFORD_N} values within {WELFORD_RTOL}: {welford_ok}")


@pytest.mark.slow
def test_criterion_4_magic04_reproduction():
    parts, ok = [], True
    for p, floor in BACC_FLOOR.items():
        m = mean_bacc(p=p)
        ok &= m >= floor
        parts.append(f"p={p}: {m:.2f} [{per_seed(p=p)}] (>= {floor})")
    report(4, ok, "mean bAcc over 3 seeds; " + ", ".join(parts))


@pytest.mark.slow
def test_criterion_5_baseline_separation():
    packet = mean_bacc(p=0.5)
    single = mean_bacc(p=0.5, model="single_baseline", imputer="ffill", lr=0.001)
    report(5, packet - single >= BASELINE_GAP,
           f"packet {packet:.2f} vs single LSTM + ffill {single:.2f}, "
           f"gap {packet - single:.2f} (>= {BASELINE_GAP})")


@pytest.mark.slow
def test_criterion_6_ablation_direction():
    ref = mean_bacc(p=0.5)
    vanilla = mean_bacc(p=0.5, cell="vanillalstm")
    unit = mean_bacc(p=0.5, normalizer="unitvector")
    ok = ref - vanilla >= TIME_GAP and ref - unit >= UNIT_GAP
    report(6, ok, f"timelstm3 {ref:.2f} vs vanillalstm {vanilla:.2f} "
                  f"[{per_seed(p=0.5, cell='vanillalstm')}] (gap {ref - vanilla:.2f} "
                  f">= {TIME_GAP}); zscore vs unitvector {unit:.2f} (gap {ref - unit:.2f} >= {UNIT_GAP})")


def higgs_path():
    raw = os.environ.get("PACKETNET_HIGGS")
    if raw and Path(raw).exists():
        return Path(raw)
    for cand in (MAGIC.parent / "HIGGS.csv", MAGIC.parent / "HIGGS.csv.gz"):
        if cand.exists():
            return cand
    return None


@pytest.mark.slow
def test_criterion_7_learning_without_forgetting():
    path = higgs_path()
    if path is None:
        report(7, False, "HIGGS data not available (set PACKETNET_HIGGS); "
                         "interval-3 persistent vs retrained gap not measured")
    cfg = RunConfig(dataset=str(path), label_column=0, shuffle=False, limit=HIGGS_PREFIX,
                    schedule="reappearing", normalizer="zscore", cell="timelstm3",
                    hidden_size=64, aggregate_by="max", lr=0.0002).validate()
    stream = make_stream(cfg, load_records(cfg))
    gaps = []
    for seed in SEEDS:
        persistent = run_prequential(PacketModel(cfg.packet_config(), seed=seed), stream,
                                     Normalizer("zscore"))
        retrained = run_prequential(PacketModel(cfg.packet_config(), seed=seed), stream,
                                    Normalizer("zscore"),
                                    callback=interval_reset(seed, len(stream), 5))
        gaps.append(100 * (interval_report(persistent)[2] - interval_report(retrained)[2]))
    gap = float(np.mean(gaps))
    report(7, gap > FORGET_GAP, f"interval-3 bAcc gap persistent - retrained = {gap:.2f} "
                                f"(> {FORGET_GAP}) over {len(SEEDS)} seeds")


def test_criterion_8_structural_invariants():
    failures = []
    rng = np.random.default_rng(8)
    # permutation invariance for all aggregators
    for op in AGGREGATORS:
        a = PacketModel(PacketConfig(hidden=5, aggregator=op), seed=1)
        b = PacketModel(PacketConfig(hidden=5, aggregator=op), seed=1)
        for t in range(15):
            ids, vals, perm = rng.permutation(7)[:4] + 1, rng.normal(size=4), rng.permutation(4)
            pa = a.train_step(Instance(t, ids, vals, t % 2))[1]
            pb = b.train_step(Instance(t, ids[perm], vals[perm], t % 2))[1]
            if pa.tobytes() != pb.tobytes():
                failures.append(f"permutation[{op}]")
                break
    # singleton aggregation identity
    one = rng.normal(size=(1, 6))
    if len({aggregate(one, op).tobytes() for op in AGGREGATORS}) != 1:
        failures.append("singleton")
    # update sparsity and pool monotonicity
    m = PacketModel(PacketConfig(hidden=5), seed=2)
    seen, prev = set(), 0
    for x in random_stream(40, n_features=9, p=0.4, seed=8):
        before = m.bank.step[:len(m)].copy()
        rows_before = dict(m.bank.row_of)
        m.train_step(x)
        touched = {j for j, r in rows_before.items() if m.bank.step[r] != before[r]}
        if not touched <= set(x.ids.tolist()):
            failures.append("sparsity")
        seen |= set(x.ids.tolist())
        if len(m) < prev or set(m.features) != seen:
            failures.append("monotonicity")
        prev = len(m)
    # determinism and checkpoint round-trip
    stream = random_stream(50, n_features=6, seed=9)
    ref = PacketModel(PacketConfig(hidden=5), seed=4)
    ref_p = [ref.train_step(x)[1].tobytes() for x in stream]
    again = PacketModel(PacketConfig(hidden=5), seed=4)
    if [again.train_step(x)[1].tobytes() for x in stream] != ref_p:
        failures.append("determinism")
    half = PacketModel(PacketConfig(hidden=5), seed=4)
    for x in stream[:20]:
        half.train_step(x)
    path = Path(os.environ.get("TMPDIR", "/tmp")) / f"packetnet_accept_{os.getpid()}.npz"
    save_checkpoint(path, half, position=20)
    resumed, _, _ = load_checkpoint(path)
    path.unlink()
    if [resumed.train_step(x)[1].tobytes() for x in stream[20:]] != ref_p[20:]:
        failures.append("checkpoint")
    report(8, not failures, "permutation, singleton, sparsity, monotonicity, determinism, "
                            "checkpoint" + (f"; failed: {sorted(set(failures))}" if failures else " all hold"))


@pytest.mark.slow
def test_criterion_9_throughput():
    _, wall = magic_run(0, p=0.5)
    report(9, wall < RUN_BUDGET_S, f"full magic04 run {wall:.1f}s (< {RUN_BUDGET_S:.0f}s)")
