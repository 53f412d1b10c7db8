"""Experiment orchestration: ``packetnet run | scenario | gradcheck | paramcount``.

Run configs are flat ``key = value`` text files (``#`` starts a comment);
any key can be overridden on the command line with ``--set key=value``.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import streams
from .baselines import IMPUTERS, SingleLSTM
from .cells import CellKind
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import ConfigurationError, PacketError, TrainingError
from .evaluation import (MetricRecord, MetricReport, aggregate_runs, format_aggregate,
                         interval_report, run_prequential)
from .normalize import NormKind, Normalizer
from .packet import PacketConfig, PacketModel, packet_param_count, head_param_count

log = logging.getLogger("packetnet")

SCHEDULES = ("bernoulli", "full", "sudden", "obsolete", "reappearing", "alternating")
MODELS = ("packet", "single_baseline")


@dataclass
class RunConfig:
    dataset: str = ""
    format: str = "csv"
    label_column: int = -1
    header: bool = False
    positive_label: str | None = None
    n_features: int = 0
    passthrough: bool = False
    shuffle: bool = True
    data_seed: int = 0
    limit: int = 0
    schedule: str = "bernoulli"
    p: float = 0.5
    p_low: float = 0.25
    p_high: float = 0.75
    period: int = 100
    intervals: int = 5
    normalizer: str = "zscore"
    decimal_m: int = 3
    model: str = "packet"
    cell: str = "timelstm3"
    hidden_size: int = 64
    aggregate_by: str = "max"
    feat_space: str = "current"
    concat: str = "both"
    lr: float = 0.0006
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    max_cells: int | None = None
    min_seen: int | None = None
    imputer: str = "ffill"
    single_hidden: int = 32
    seeds: list = field(default_factory=lambda: [0])
    output_dir: str = "runs"
    checkpoint_in: str | None = None
    checkpoint_out: str | None = None
    stop_at: int | None = None

    def packet_config(self) -> PacketConfig:
        return PacketConfig(cell=self.cell, hidden=self.hidden_size, aggregator=self.aggregate_by,
                            feat_space=self.feat_space, concat=self.concat, lr=self.lr,
                            beta1=self.beta1, beta2=self.beta2, eps=self.eps,
                            weight_decay=self.weight_decay, max_cells=self.max_cells,
                            min_seen=self.min_seen)

    def validate(self, check_files: bool = True) -> "RunConfig":
        def bad(key, why):
            raise ConfigurationError(f"config key {key!r}: {why}")

        if not self.dataset:
            bad("dataset", "required")
        if check_files and not Path(self.dataset).exists():
            bad("dataset", f"file {self.dataset} does not exist")
        if self.format not in ("csv", "svmlight"):
            bad("format", "expected csv or svmlight")
        if self.format == "svmlight" and self.n_features <= 0:
            bad("n_features", "required for svmlight input")
        if self.schedule not in SCHEDULES:
            bad("schedule", f"expected one of {SCHEDULES}")
        for key in ("p", "p_low", "p_high"):
            if not 0.0 <= getattr(self, key) <= 1.0:
                bad(key, "must lie in [0, 1]")
        if self.normalizer not in {k.value for k in NormKind}:
            bad("normalizer", f"unknown normalizer {self.normalizer!r}")
        if self.model not in MODELS:
            bad("model", f"expected one of {MODELS}")
        if self.imputer not in IMPUTERS:
            bad("imputer", f"expected one of {IMPUTERS}")
        if self.cell not in {k.value for k in CellKind}:
            bad("cell", f"unknown cell kind {self.cell!r}")
        if not self.seeds:
            bad("seeds", "at least one seed is required")
        if self.intervals <= 0:
            bad("intervals", "must be positive")
        if check_files and self.checkpoint_in and not Path(self.checkpoint_in).exists():
            bad("checkpoint_in", f"file {self.checkpoint_in} does not exist")
        try:
            self.packet_config()
        except ConfigurationError as exc:
            raise ConfigurationError(f"config: {exc}") from None
        return self


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}
# alternate spellings accepted for the main hyperparameters
_ALIASES = {"hidden": "hidden_size", "aggregator": "aggregate_by", "learning_rate": "lr",
            "l_f": "max_cells", "i_l": "min_seen"}


def _convert(key: str, raw: str):
    f = _FIELDS[key]
    default = f.default if f.default is not dataclasses.MISSING else None
    raw = raw.strip()
    if key == "seeds":
        return [int(s) for s in raw.replace(",", " ").split()]
    if raw.lower() in ("none", "null", ""):
        return None
    kind = type(default) if default is not None else None
    if key in ("max_cells", "min_seen", "stop_at"):
        kind = int
    try:
        if kind is bool:
            if raw.lower() not in ("1", "0", "true", "false", "yes", "no"):
                raise ValueError(raw)
            return raw.lower() in ("1", "true", "yes")
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
    except ValueError:
        raise ConfigurationError(f"config key {key!r}: cannot parse {raw!r}") from None
    return raw


def parse_config_text(text: str, overrides=()) -> RunConfig:
    values = {}
    lines = [(n, l) for n, l in enumerate(text.splitlines(), start=1)]
    lines += [(f"--set {o}", o) for o in overrides]
    for where, line in lines:
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{where}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        key = _ALIASES.get(key, key)
        if key not in _FIELDS:
            raise ConfigurationError(f"unknown config key {key!r}")
        values[key] = _convert(key, raw)
    return RunConfig(**values)


def load_config(path=None, overrides=(), check_files: bool = True) -> RunConfig:
    text = Path(path).read_text() if path else ""
    return parse_config_text(text, overrides).validate(check_files)


def load_records(cfg: RunConfig):
    if cfg.format == "svmlight":
        data = streams.read_svmlight(cfg.dataset, cfg.n_features, passthrough=cfg.passthrough)
    else:
        data = streams.read_csv(cfg.dataset, cfg.label_column, cfg.header, cfg.positive_label)
    if cfg.shuffle:
        data = streams.shuffle_records(data, cfg.data_seed)
    # prefix taken after shuffling: the raw file may be sorted by class
    if cfg.limit:
        data = data[:cfg.limit]
    return data


def make_stream(cfg: RunConfig, data) -> list:
    if data and isinstance(data[0], streams.Instance):
        # already haphazard (svmlight passthrough): re-index positions only
        return [streams.Instance(t, x.ids, x.values, x.label) for t, x in enumerate(data)]
    return streams.build_stream(data, cfg.schedule, p=cfg.p, seed=cfg.data_seed,
                                intervals=cfg.intervals, p_low=cfg.p_low, p_high=cfg.p_high,
                                period=cfg.period)


def n_features_of(cfg: RunConfig, data) -> int:
    if cfg.n_features:
        return cfg.n_features
    return len(data[0].values)


def make_model(cfg: RunConfig, seed: int, n_features: int = 0):
    if cfg.model == "single_baseline":
        return SingleLSTM(n_features, hidden=cfg.single_hidden, imputer=cfg.imputer, lr=cfg.lr,
                          seed=seed, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps,
                          weight_decay=cfg.weight_decay)
    return PacketModel(cfg.packet_config(), seed=seed)


def run_one(cfg: RunConfig, seed: int, stream, n_features: int):
    """One prequential pass; honours checkpoint_in / stop_at / checkpoint_out."""
    start = 0
    record = None
    if cfg.checkpoint_in:
        model, normalizer, start = load_checkpoint(cfg.checkpoint_in)
        log_path = Path(cfg.checkpoint_in).with_suffix(".scores.csv")
        if log_path.exists():
            record = MetricRecord.read_log(log_path)
    else:
        model = make_model(cfg, seed, n_features)
        normalizer = Normalizer(cfg.normalizer, cfg.decimal_m)
    record = run_prequential(model, stream, normalizer, cfg.intervals, start=start,
                             stop=cfg.stop_at, record=record)
    if cfg.checkpoint_out:
        if not isinstance(model, PacketModel):
            raise ConfigurationError("checkpoints are supported for packet models only")
        stop = len(stream) if cfg.stop_at is None else min(cfg.stop_at, len(stream))
        save_checkpoint(cfg.checkpoint_out, model, normalizer, position=stop)
        record.write_log(Path(cfg.checkpoint_out).with_suffix(".scores.csv"))
    return record, model


def run(cfg: RunConfig) -> list:
    """Run every seed, writing per-seed reports, score logs and the aggregate."""
    data = load_records(cfg)
    stream = make_stream(cfg, data)
    n_features = n_features_of(cfg, data) if cfg.model == "single_baseline" else 0
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    reports = []
    for seed in cfg.seeds:
        try:
            record, _ = run_one(cfg, seed, stream, n_features)
        except TrainingError as exc:
            partial = getattr(exc, "record", None)
            if partial is not None:
                partial.write_log(out / f"seed{seed}.scores.partial.csv")
            (out / f"seed{seed}.ABORTED").write_text(str(exc) + "\n")
            raise
        report = MetricReport.from_record(record, cfg.intervals)
        record.write_log(out / f"seed{seed}.scores.csv")
        (out / f"seed{seed}.report.txt").write_text(report.to_text())
        reports.append(report)
        log.info("seed %d: balanced accuracy %.2f", seed, report.balanced_accuracy * 100)
    (out / "aggregate.txt").write_text(format_aggregate(aggregate_runs(reports)))
    return reports


def interval_reset(seed: int, total: int, intervals: int):
    """Prequential callback that reinitialises the model on entering each new interval."""
    current = [1]

    def callback(pos, model):
        k = streams.interval_of(pos, total, intervals)
        if k != current[0]:
            current[0] = k
            model.reinitialize(seed=seed, t=pos)

    return callback


def run_scenario_comparison(cfg: RunConfig, stream=None) -> dict:
    """Persistent model vs a model reinitialised at every interval boundary.

    Both passes see the identical instance sequence. Returns, per seed, the
    per-interval balanced accuracy of each variant.
    """
    if stream is None:
        stream = make_stream(cfg, load_records(cfg))
    total = len(stream)
    results = {}
    for seed in cfg.seeds:
        persistent = PacketModel(cfg.packet_config(), seed=seed)
        rec_p = run_prequential(persistent, stream, Normalizer(cfg.normalizer, cfg.decimal_m),
                                cfg.intervals)
        retrained = PacketModel(cfg.packet_config(), seed=seed)
        reset = interval_reset(seed, total, cfg.intervals)
        rec_r = run_prequential(retrained, stream, Normalizer(cfg.normalizer, cfg.decimal_m),
                                cfg.intervals, callback=reset)
        results[seed] = dict(persistent=interval_report(rec_p, cfg.intervals),
                             retrained=interval_report(rec_r, cfg.intervals))
    return results


def write_scenario(results: dict, out_dir) -> str:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = []
    for seed, res in results.items():
        for variant in ("persistent", "retrained"):
            for k, v in enumerate(res[variant], start=1):
                lines.append(f"seed{seed}.{variant}.interval_{k}_balanced_accuracy = "
                             + ("missing" if math.isnan(v) else f"{100 * v:.2f}"))
    n = len(next(iter(results.values()))["persistent"])
    for variant in ("persistent", "retrained"):
        for k in range(n):
            vals = np.array([r[variant][k] for r in results.values()]) * 100
            std = vals.std(ddof=1) if len(vals) > 1 else 0.0
            lines.append(f"mean.{variant}.interval_{k + 1}_balanced_accuracy = "
                         + _pm(vals.mean(), std))
    text = "\n".join(lines) + "\n"
    (out / "scenario.txt").write_text(text)
    return text


def _pm(mean, std) -> str:
    return "missing" if math.isnan(mean) else f"{mean:.2f} +- {std:.2f}"


def paramcount_text(cell="timelstm3", hidden=64, slots=10, concat="both") -> str:
    cell_n = packet_param_count(1, cell, hidden, concat=concat) - head_param_count(hidden, concat=concat)
    head_n = head_param_count(hidden, concat=concat)
    total = packet_param_count(slots, cell, hidden, concat=concat)
    return (f"cell ({cell}, s={hidden}) = {cell_n}\n"
            f"head (concat={concat}) = {head_n}\n"
            f"packet ({slots} slots) = {total}\n")


def gradcheck_main(draws: int, seed: int) -> int:
    from .gradcheck import check_cells, check_packet

    failed = 0
    results = check_cells(draws, seed)
    for agg in ("mean", "sum", "min", "max"):
        for space in ("current", "universal"):
            results.append(check_packet(CellKind.TIMELSTM3, agg, space, seed=seed))
    results.append(check_packet(CellKind.GRU, "mean", "current", seed=seed))
    for r in results:
        status = "PASS" if r.ok else "FAIL"
        failed += not r.ok
        print(f"{status} {r.name}: draws={r.draws} worst_ratio={r.worst:.3g}")
    return 1 if failed else 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="packetnet", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb in ("run", "scenario"):
        p = sub.add_parser(verb)
        p.add_argument("config", nargs="?")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE")
    p = sub.add_parser("gradcheck")
    p.add_argument("--draws", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p = sub.add_parser("paramcount")
    p.add_argument("--cell", default="timelstm3")
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--slots", type=int, default=10)
    p.add_argument("--concat", default="both")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.verb == "run":
            cfg = load_config(args.config, args.overrides)
            print(format_aggregate(aggregate_runs(run(cfg))), end="")
        elif args.verb == "scenario":
            cfg = load_config(args.config, args.overrides)
            print(write_scenario(run_scenario_comparison(cfg), cfg.output_dir), end="")
        elif args.verb == "gradcheck":
            return gradcheck_main(args.draws, args.seed)
        else:
            print(paramcount_text(args.cell, args.hidden, args.slots, args.concat), end="")
    except PacketError as exc:
        print(f"packetnet: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
