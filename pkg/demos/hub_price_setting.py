"""The hub's own problem: choose prices on a binary grid, then schedule gas and battery.

Shows the price grid, checks branch and bound against full enumeration on a
few random hubs, and sweeps the gas price to show the hub switching from
gas-backed sales to battery and resale.
"""
import numpy as np

from hubmarket import enumerate_miqp_oracle, solve_hub, solve_miqp
from hubmarket.hub import build_hub_subproblem
from hubmarket.miqp import build_binary_expansion
from hubmarket.model import Battery, EnergyHub

exp, _ = build_binary_expansion(50.0, 85.0, 3, 25.0, 1)
print("sell price grid, 3 bits:", exp.levels())

hub = EnergyHub(attach_node=2, eta_chp=0.35, gas_max=200.0,
                battery=Battery(e_min=5.0, e_max=40.0, e_0=20.0, eta_charge=0.95, eta_discharge=0.95,
                                charge_max=10.0, discharge_max=10.0),
                sell_price_min=50.0, sell_price_max=85.0, buy_price_min=45.0, buy_price_max=60.0,
                sell_qty_min=0.0, sell_qty_max=25.0, buy_qty_min=0.0, buy_qty_max=20.0)
# what the region asked for last round: (purchase from hub, sale to hub) per period
request = np.array([[20.0, 0.0], [10.0, 5.0], [25.0, 0.0]])

rng = np.random.default_rng(3)
for trial in range(3):
    req = request + rng.uniform(-3, 3, request.shape).clip(-request)
    p = build_hub_subproblem(hub, req, 26.0, 1.0, 2)
    bb, full = solve_miqp(p), enumerate_miqp_oracle(p)
    print(f"trial {trial}: {p.num_binaries} binaries, B&B {bb.objective:.6f} in {bb.nodes} nodes, "
          f"enumeration {full.objective:.6f} over {full.nodes} assignments")

print("\ngas $/MWh  sell prices          gas MW")
for gas in (15.0, 26.0, 35.0):
    d = solve_hub(hub, request, gas, 1.0, 3)
    print(f"{gas:8.1f}   {np.round(d.sell_price, 2)}   {np.round(d.gas, 2)}")
