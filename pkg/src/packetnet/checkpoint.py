"""Versioned ``.npz`` checkpoints of a packet model plus its normalizer."""
from __future__ import annotations

import hashlib
import json

import numpy as np

from .errors import ConfigurationError
from .normalize import Normalizer, StreamingStats
from .packet import PacketModel

FORMAT_VERSION = 1


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def save_checkpoint(path, model: PacketModel, normalizer: Normalizer | None = None,
                    position: int | None = None):
    """Write model (and normalizer) state; ``position`` is the next stream index."""
    state = model.state()
    meta = dict(state["meta"], version=FORMAT_VERSION,
                config_hash=config_hash(state["meta"]["config"]),
                position=model.t if position is None else position)
    arrays = dict(state["arrays"])
    if normalizer is not None:
        meta["normalizer"] = dict(kind=normalizer.kind.value, m=normalizer.m)
        for k, v in normalizer.stats.state().items():
            arrays[f"norm_{k}"] = v
    with open(path, "wb") as fh:
        np.savez(fh, meta=np.array(json.dumps(meta)), **arrays)


def load_checkpoint(path):
    """Returns ``(model, normalizer_or_None, position)``."""
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        arrays = {k: data[k] for k in data.files if k != "meta"}
    if meta.get("version") != FORMAT_VERSION:
        raise ConfigurationError(f"unsupported checkpoint version {meta.get('version')}")
    if config_hash(meta["config"]) != meta["config_hash"]:
        raise ConfigurationError("checkpoint config hash mismatch")
    model = PacketModel.from_state(dict(meta=meta, arrays=arrays))
    normalizer = None
    if "normalizer" in meta:
        normalizer = Normalizer(meta["normalizer"]["kind"], meta["normalizer"]["m"])
        normalizer.stats = StreamingStats.from_state(
            {k[5:]: v for k, v in arrays.items() if k.startswith("norm_")})
    return model, normalizer, meta["position"]
