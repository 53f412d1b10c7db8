"""Walk through one haphazard stream by hand.

A tiny stream where features come and go, showing what the packet keeps
between instances: one cell per feature ever seen, each cell's short-term
memory and the shared long-term memory that every active cell reads.

    python demos/01_haphazard_stream.py
"""
import numpy as np

from packetnet import Instance, Normalizer, PacketConfig, PacketModel

stream = [
    Instance.from_pairs(0, [(1, 0.3), (2, 1.1)], 1),
    Instance.from_pairs(1, [(2, 0.9)], 1),
    Instance.from_pairs(2, [], 0),                     # nothing observed at all
    Instance.from_pairs(3, [(5, -2.0), (1, 0.1)], 0),  # feature 5 shows up unannounced
    Instance.from_pairs(4, [(2, 1.4), (5, -1.7)], 1),
]

model = PacketModel(PacketConfig(hidden=8, lr=0.01), seed=0)
norm = Normalizer("zscore")

for x in stream:
    z = norm(x)
    fwd = model.forward(z)
    loss, probs = model.train_step(z, fwd=fwd)
    deltas = {} if fwd.empty else dict(zip(fwd.ids.tolist(), fwd.deltas.tolist()))
    print(f"t={x.t} present={x.ids.tolist()} delay={deltas} "
          f"p(y=1)={probs[1]:.3f} loss={loss:.3f} pool={model.features}")

# feature 1 was last seen at t=3; its cell has been updated twice
print("slot 1:", {k: v for k, v in model.slot(1).items() if k not in ("theta", "h")})
print("long-term memory norm:", round(float(np.linalg.norm(model.c)), 4))
print("parameters in use:", model.param_count())
