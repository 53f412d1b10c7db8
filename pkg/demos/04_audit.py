"""Gradient and parameter-count audit.

Every cell kind is checked against central finite differences on random
draws, then the full model (head included) for each aggregator.
"""
from packetnet.cells import CellKind, param_count
from packetnet.gradcheck import check_cells, check_packet
from packetnet.packet import head_param_count, packet_param_count

for r in check_cells(draws=20, seed=1):
    print(f"{r.name:12s} worst mismatch ratio {r.worst:.2e}  {'ok' if r.ok else 'FAILED'}")
for agg in ("mean", "sum", "min", "max"):
    r = check_packet(CellKind.TIMELSTM3, agg, "universal", seed=1)
    print(f"{r.name:44s} {r.worst:.2e}")

s = 64
print(f"TimeLSTM3 cell, s={s}: {param_count(CellKind.TIMELSTM3, s)} (4s^2+17s = {4 * s * s + 17 * s})")
print(f"head: {head_param_count(s)}; 10 cells + head: {packet_param_count(10)}")
