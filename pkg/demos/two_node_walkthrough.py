"""Two nodes, one line, one hub: watch the distributed market settle.

Runs the ADMM market on the smallest bundled scenario, prints the residual
trace as it shrinks, then clears the same market in one QP at the hub prices
the distributed run ended with and compares the two.
"""
from pathlib import Path

import numpy as np

from hubmarket import AdmmConfig, build_welfare_report, load_scenario, run_admm, solve_centralized

HERE = Path(__file__).resolve().parent
scenario = load_scenario(HERE.parent / "scenarios" / "two_node.yaml")


def show_iteration(state):
    r_p, r_t, obj = state.history[-1]
    print(f"  iter {state.k:3d}  r_P={r_p:9.2e}  r_theta={r_t:9.2e}  regional cost={obj:12.3f}")


print("distributed run (rho=1, eps_p=1e-2, eps_theta=1e-3)")
out = run_admm(scenario, AdmmConfig(), on_iteration=show_iteration)
print(f"converged={out.converged} after {out.iterations} iterations, {out.seconds:.2f} s\n")

# The hub posts one (sell, buy) price pair per period on its binary grid.
print("hub prices  sell:", out.hub_prices.sell, " buy:", out.hub_prices.buy)
h = out.hub
print("hub sells   ", np.round(h.sell_qty, 3), " buys", np.round(h.buy_qty, 3), " gas", np.round(h.gas, 3))
print("battery SOC ", np.round(h.soc, 3), "\n")

cen = solve_centralized(scenario, out.hub_prices)
print("line flow   distributed", np.round(out.flow[:, 0], 3))
print("            centralized", np.round(cen.flow[:, 0], 3))
print(f"objective gap {abs(out.objective - cen.objective):.2e} $\n")

rep = build_welfare_report(out, scenario)
print(f"{'player':8s} {'v_or_c':>10s} {'revenue':>10s} {'SC':>10s}")
for p in rep.players:
    print(f"{p.player:8s} {p.v_or_c:10.2f} {p.revenue:10.2f} {p.sc:10.2f}")
