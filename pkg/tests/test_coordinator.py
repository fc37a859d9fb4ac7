import numpy as np
import pytest

from conftest import minimal_doc, two_node_doc
from hubmarket.agents import AgentDecision
from hubmarket.coordinator import (AdmmConfig, HubPrices, MarketOutcome, NotConverged, build_welfare_report,
                                   compute_residuals, coupling_residual, init_state, node_accounts, run_admm,
                                   solve_centralized, solve_rso, update_duals)
from hubmarket.model import scenario_from_dict
from hubmarket.qp import QpInfeasible

FIXED = HubPrices(np.full(4, 70.0), np.full(4, 25.0))  # buy price below the supplier's marginal cost


def _decide(state, values_by_node):
    state.decisions = {n: AgentDecision(n, state.keys(n), np.asarray(v, float), 0.0)
                       for n, v in values_by_node.items()}


def test_rso_splits_a_flow_mismatch():
    doc = two_node_doc()
    del doc["agents"][1]["hub"]
    two_node = scenario_from_dict(doc)
    st = init_state(two_node, AdmmConfig(rho=1.0))
    B = two_node.network.lines[0].susceptance
    vals = {}
    for n, exp in ((1, 5.0), (2, -3.0)):
        keys = st.keys(n)
        v = np.zeros((4, len(keys)))
        v[:, keys.index("flow[0]")] = exp
        v[:, keys.index("qty")] = abs(exp)
        th2 = -4.0 / B
        if n == 1:
            v[:, keys.index("nbr_theta[0]")] = th2
        else:
            v[:, keys.index("theta")] = th2
        vals[n] = v
    _decide(st, vals)
    Z = st.layout.unstack(solve_rso(two_node, st))
    assert np.allclose(Z[:, st.layout.var("flow", 0)], 4.0, atol=1e-6)


def test_network_feasible_copies_are_a_fixed_point(two_node):
    cen = solve_centralized(two_node, FIXED)
    st = init_state(two_node, AdmmConfig())
    lay = st.layout
    z = np.zeros((4, lay.nv))
    for name in ("theta", "flow", "qty", "up_buy", "up_sell", "hub_buy", "hub_sell"):
        z[:, lay.block(name)] = getattr(cen, name)
    z = z.ravel()
    st.hub_prices = FIXED
    _decide(st, {n: lay.project(n, z) for n in two_node.network.nodes})
    assert np.max(np.abs(solve_rso(two_node, st) - z)) <= 1e-6


def test_dual_step_is_half_rho_times_gap(two_node):
    st = init_state(two_node, AdmmConfig(rho=1.0))
    for n in st.hats:
        st.hats[n] = np.zeros_like(st.hats[n])
    _decide(st, {n: np.ones_like(h) for n, h in st.hats.items()})
    update_duals(st)
    for n in st.duals:
        assert np.all(st.duals[n] == 0.5)
    update_duals(st, rho=2.0)
    assert np.all(st.duals[1] == 1.5)


def test_residuals_split_lines_and_angles(two_node):
    st = init_state(two_node, AdmmConfig())
    vals = {n: st.hats[n].copy() for n in st.hats}
    vals[1][:, st.keys(1).index("flow[0]")] += 0.02
    _decide(st, vals)
    r_p, r_t = compute_residuals(st)
    assert r_p == pytest.approx(0.02, abs=1e-12)
    assert r_t == 0.0
    assert coupling_residual(st) == pytest.approx(0.02, abs=1e-12)


def test_single_node_converges_at_once():
    doc = {
        "name": "solo", "horizon": 2,
        "network": {"reference_node": 1, "nodes": [1], "lines": []},
        "agents": [{"node": 1, "kind": "consumer", "value": {"b1": 90.0, "b2": 1.0},
                    "demand": {"min": 0.0, "max": 10.0}, "upstream": {"buy": 20.0}}],
        "hub": minimal_doc()["hub"] | {"attach_node": 1},
        "signals": {"gas_price": 26.0, "upstream": [{"node": 1, "buy": 50.0, "sell": 0.0}]},
    }
    out = run_admm(scenario_from_dict(doc))
    assert out.converged and out.iterations == 1
    # marginal value 90 - 2q equals the upstream price 50 at q = 20, above the 10 MW cap
    assert np.allclose(out.qty[:, 0], 10.0, atol=1e-6)


def test_two_node_matches_centralized(two_node):
    out = run_admm(two_node, AdmmConfig(hub_prices=FIXED))
    cen = solve_centralized(two_node, FIXED)
    assert out.converged
    assert np.max(np.abs(out.flow - cen.flow)) <= 1e-2
    assert out.objective == pytest.approx(cen.objective, abs=1e-1)


@pytest.mark.parametrize("rho", [0.5, 1.0, 2.0])
def test_penalty_sweep_reaches_the_same_market(two_node, rho):
    cen = solve_centralized(two_node, FIXED)
    # a tenfold tighter line residual so the comparison is not dominated by the stopping rule
    out = run_admm(two_node, AdmmConfig(rho=rho, hub_prices=FIXED, max_iter=400, eps_p=1e-3))
    assert out.converged
    assert out.objective == pytest.approx(cen.objective, abs=1e-2)
    assert np.max(np.abs(out.qty - cen.qty)) <= 1e-3


def test_no_demand_clears_nothing():
    doc = two_node_doc()
    doc["agents"][1]["demand"] = {"min": 0.0, "max": 0.0}
    cen = solve_centralized(scenario_from_dict(doc), FIXED)
    for name in ("flow", "qty", "hub_buy", "hub_sell"):
        assert np.max(np.abs(getattr(cen, name))) <= 1e-6


def test_centralized_infeasible_reported():
    doc = two_node_doc()
    doc["agents"][1]["demand"] = {"min": 30.0, "max": 30.0}  # above the 20 MW line limit plus 10 MW from the hub
    doc["agents"][1]["hub"] = {"buy": 5.0, "sell": 0.0}
    with pytest.raises(QpInfeasible):
        solve_centralized(scenario_from_dict(doc), FIXED)


def _manual_outcome(scenario, flow, price):
    T = scenario.horizon
    z = np.zeros((T, 2))
    return MarketOutcome(
        "centralized", True, 1, z.copy(), np.full((T, 1), flow), np.full((T, 2), flow), z.copy(), z.copy(),
        z.copy(), z.copy(), np.full((T, 2), price), HubPrices(np.zeros(T), np.zeros(T)), None, 0.0)


def test_line_trade_revenues():
    s = scenario_from_dict(minimal_doc())
    out = _manual_outcome(s, 5.0, 60.0)
    acc = {label: rev for label, _, _, rev in node_accounts(out, s)}
    assert acc["S1"] == pytest.approx(300.0) and acc["C2"] == pytest.approx(-300.0)


def test_line_transfers_are_neutral(two_node):
    out = solve_centralized(two_node, FIXED)
    lp = out.line_price(two_node)
    net = two_node.network
    total = 0.0
    for n in net.nodes:
        for ln, sign in net.incident(n):
            total += float(np.sum(lp[:, ln] * sign * out.flow[:, ln]))
    assert total == pytest.approx(0.0, abs=1e-9)


@pytest.mark.parametrize("mode", ["distributed", "centralized"])
def test_welfare_double_entry(two_node, two_node_run, mode):
    out = two_node_run if mode == "distributed" else solve_centralized(two_node, two_node_run.hub_prices)
    rep = build_welfare_report(out, two_node)
    nodes = [p for p in rep.players if p.player not in ("EH", "Region")]
    assert sum(p.sc for p in nodes) == pytest.approx(-out.objective, abs=1e-4)
    assert rep.regional.sc == pytest.approx(sum(p.sc for p in nodes), abs=1e-9)


def test_unconverged_run_flagged(two_node):
    out = run_admm(two_node, AdmmConfig(max_iter=2))
    assert not out.converged and out.iterations == 2
    with pytest.raises(NotConverged):
        out.check()


def test_config_validation():
    for bad in (dict(rho=0.0), dict(eps_p=0.0), dict(max_iter=0), dict(gamma=0)):
        with pytest.raises(ValueError):
            AdmmConfig(**bad)


def test_hub_trades_are_deliverable(two_node_run, two_node):
    out = two_node_run
    h = out.hub
    assert h is not None
    assert np.allclose(h.sell_qty, out.hub_buy.sum(axis=1), atol=1e-6)
    assert np.allclose(h.buy_qty, out.hub_sell.sum(axis=1), atol=1e-6)
    bal = h.buy_qty + two_node.hub.eta_chp * h.gas + h.discharge - h.charge - h.sell_qty
    assert np.max(np.abs(bal)) <= 1e-6
