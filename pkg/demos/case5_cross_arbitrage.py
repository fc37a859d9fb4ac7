"""Five-node region: cheap imports at node 1, exports at node 5, a gas-fired hub.

Node 1 buys from the upstream grid on a time-of-use tariff, node 5 can sell
upstream at 90 $/MWh, and the hub at node 2 burns gas only when the local
price pays for the conversion.  The run takes about half a minute.
"""
from pathlib import Path

import numpy as np

from hubmarket import build_welfare_report, load_scenario, run_admm

HERE = Path(__file__).resolve().parent
s = load_scenario(HERE.parent / "scenarios" / "case5.yaml")
net = s.network

out = run_admm(s)
out.check()
print(f"converged in {out.iterations} iterations, {out.seconds:.1f} s "
      f"({out.seconds / out.iterations:.3f} s per iteration)\n")

i1, i5, ih = net.index(1), net.index(5), net.index(s.hub.attach_node)
cost = np.asarray(s.signals.gas_price) / s.hub.eta_chp
print(" t  tariff1  buy@1  sell@5  price@hub  hub gas")
for t in range(s.horizon):
    flag = "" if out.node_prices[t, ih] >= cost[t] else "  (below gas cost)"
    print(f"{t:2d} {s.signals.buy_price(1, s.horizon)[t]:8.1f} {out.up_buy[t, i1]:6.1f} {out.up_sell[t, i5]:7.1f}"
          f" {out.node_prices[t, ih]:10.2f} {out.hub.gas[t]:8.2f}{flag}")

both = np.flatnonzero((out.up_buy[:, i1] > 1e-3) & (out.up_sell[:, i5] > 1e-3))
print(f"\nimport at node 1 while exporting at node 5 in {both.size} of {s.horizon} periods")
print(f"hub gas only above {cost[0]:.2f} $/MWh: used in periods {np.flatnonzero(out.hub.gas > 0).tolist()}\n")

for p in build_welfare_report(out, s).players:
    print(f"{p.player:7s} SC={p.sc:12.2f}")
