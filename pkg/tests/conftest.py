import os
from pathlib import Path

import numpy as np
import pytest

from packetnet.streams import Instance

ROOT = Path(__file__).resolve().parents[1]
MAGIC = ROOT / "data" / "magic04.data"

# filled by the acceptance module, echoed in the terminal summary
ACCEPTANCE_LINES = []


def inst(t, pairs, label=1):
    """Instance from a {feature: value} dict or list of pairs."""
    pairs = list(pairs.items()) if isinstance(pairs, dict) else list(pairs)
    return Instance.from_pairs(t, pairs, label)


def random_stream(n, n_features=5, p=0.6, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for t in range(n):
        ids = np.flatnonzero(rng.random(n_features) < p) + 1
        out.append(Instance(t, ids, rng.normal(size=len(ids)), int(rng.integers(2))))
    return out


@pytest.fixture
def magic_path():
    if not MAGIC.exists():
        pytest.skip("bundled dataset missing")
    return MAGIC


def pytest_collection_modifyitems(config, items):
    if os.environ.get("PACKETNET_SKIP_SLOW"):
        skip = pytest.mark.skip(reason="PACKETNET_SKIP_SLOW set")
        for item in items:
            if "slow" in item.keywords:
                item.add_marker(skip)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
