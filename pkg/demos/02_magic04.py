"""magic04 under random feature dropout, packet model vs a single LSTM.

Each instance keeps every feature independently with probability p. The
packet model never sees the dropped values; the single LSTM needs a dense
vector, so the missing ones are forward-filled from the last observation.
One seed per model; the acceptance suite averages three.

    python demos/02_magic04.py [p]      # default p = 0.5, a few minutes
"""
import sys
from pathlib import Path

from packetnet.cli import RunConfig, load_records, make_model, make_stream
from packetnet.evaluation import MetricReport, run_prequential
from packetnet.normalize import Normalizer

ROOT = Path(__file__).resolve().parents[1]
p = float(sys.argv[1]) if len(sys.argv) > 1 else 0.5

base = dict(dataset=str(ROOT / "data" / "magic04.data"), positive_label="g", p=p)
variants = {
    "packet (TimeLSTM3, max)": RunConfig(**base),
    "single LSTM + ffill": RunConfig(**base, model="single_baseline", lr=0.001),
}

data = load_records(variants["packet (TimeLSTM3, max)"])
print(f"{len(data)} instances, {len(data[0].values)} features, p = {p}")
for name, cfg in variants.items():
    stream = make_stream(cfg, data)
    model = make_model(cfg, seed=0, n_features=len(data[0].values))
    rec = run_prequential(model, stream, Normalizer(cfg.normalizer))
    rep = MetricReport.from_record(rec)
    per_interval = " ".join(f"{100 * v:.1f}" for v in rep.interval_bacc)
    print(f"{name:26s} bAcc {100 * rep.balanced_accuracy:6.2f}  AUROC {100 * rep.auroc:6.2f}"
          f"  [{per_interval}]  {rep.seconds:.0f}s")
