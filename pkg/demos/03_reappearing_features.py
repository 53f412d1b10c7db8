"""Do cells remember features that went away and came back?

Reappearing schedule on magic04: features 1-5 are present in intervals
1, 3 and 5, features 6-10 in intervals 2 and 4. The persistent model keeps
its cells across the gap; the other one is rebuilt from scratch at every
interval boundary. The interesting numbers are intervals 3-5.

    python demos/03_reappearing_features.py      # ~2-3 minutes
"""
from pathlib import Path

from packetnet.cli import RunConfig, run_scenario_comparison

ROOT = Path(__file__).resolve().parents[1]
cfg = RunConfig(dataset=str(ROOT / "data" / "magic04.data"), positive_label="g",
                schedule="reappearing", seeds=[0]).validate()

res = run_scenario_comparison(cfg)[0]
print("interval   persistent   retrained   gap")
for k, (a, b) in enumerate(zip(res["persistent"], res["retrained"]), start=1):
    print(f"{k:8d}   {100 * a:10.2f}   {100 * b:9.2f}   {100 * (a - b):+.2f}")
