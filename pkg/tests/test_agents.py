import json
from dataclasses import fields, replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import minimal_doc, scenario_with
from oracles import qp_active_set_oracle
from hubmarket.agents import (AgentDecision, AgentView, agent_objective, build_agent_subproblem,
                              build_consumer_subproblem, build_supplier_subproblem, solve_agent)
from hubmarket.coordinator import AdmmConfig, init_state
from hubmarket.model import SchemaError, scenario_from_dict

_TWO_NODE = scenario_with()
PRIVATE = {"cost", "value", "a1", "a2", "b1", "b2", "private", "generation", "demand", "kind"}


def _view(scenario, node, **changes):
    st_ = init_state(scenario, AdmmConfig())
    st_.hub_prices = None
    return replace(st_.agent_view(node), **changes)


def _col(view, key):
    return view.keys.index(key)


def _balance(agent, d):
    sgn = 1.0 if agent.is_supplier else -1.0
    net = sgn * d.column("qty") + d.column("up_buy") - d.column("up_sell") + d.column("hub_buy") - d.column("hub_sell")
    return net - sum(d.exports.values())


def test_message_fields_are_public_only(two_node):
    view_fields = {f.name for f in fields(AgentView)}
    decision_fields = {f.name for f in fields(AgentDecision)}
    assert view_fields == {"node", "keys", "rho", "duals", "hats", "hub_sell_price", "hub_buy_price",
                           "upstream_buy_price", "upstream_sell_price", "lines", "susceptance", "flow_bounds",
                           "angle_bounds", "nbr_angle_bounds", "hub_caps"}
    assert decision_fields == {"node", "keys", "values", "objective", "balance_dual"}
    for n in two_node.network.nodes:
        v = _view(two_node, n)
        d = solve_agent(two_node.agent(n), v)
        for msg in (v.to_dict(), d.to_dict()):
            assert not PRIVATE & set(msg)
            json.dumps(msg)  # plain data only
            assert not any(k in str(msg["keys"]) for k in PRIVATE)


def test_local_balance_holds(two_node):
    rng = np.random.default_rng(0)
    for n in two_node.network.nodes:
        v = _view(two_node, n)
        v = replace(v, duals=rng.normal(scale=20, size=v.duals.shape), hats=v.hats + rng.normal(size=v.hats.shape))
        a = two_node.agent(n)
        d = solve_agent(a, v)
        assert np.max(np.abs(_balance(a, d))) <= 1e-6


def test_local_flow_law(two_node):
    v = _view(two_node, 2)
    d = solve_agent(two_node.agent(2), v)
    (ln, exp), = d.exports.items()
    B = two_node.network.lines[ln].susceptance
    th, nb = d.values[:, _col(v, "theta")], d.values[:, _col(v, f"nbr_theta[{ln}]")]
    assert np.allclose(exp, B * (th - nb), atol=1e-8)


def test_supplier_marginal_cost_equals_price_without_penalty():
    s = scenario_from_dict(minimal_doc())
    v = _view(s, 1, rho=0.0)
    duals = np.zeros_like(v.duals)
    duals[:, _col(v, "flow[0]")] = -21.0  # paid 21 $/MWh on exports
    d = solve_agent(s.agent(1), replace(v, duals=duals))
    # 2 a2 q + a1 = 21 with a2 = 0.1, a1 = 20
    assert d.qty[0] == pytest.approx(5.0, abs=1e-6)


def test_consumer_marginal_value_equals_price():
    s = scenario_from_dict(minimal_doc())
    v = _view(s, 2, rho=0.0)
    duals = np.zeros_like(v.duals)
    duals[:, _col(v, "flow[0]")] = -70.0  # import cost 70 $/MWh
    d = solve_agent(s.agent(2), replace(v, duals=duals))
    # b1 - 2 b2 q = 70 with b1 = 80, b2 = 1
    assert d.qty[0] == pytest.approx(5.0, abs=1e-6)


def test_consumer_hub_purchase_matches_kkt_oracle():
    s = scenario_from_dict(minimal_doc(hub_access=True))
    v = _view(s, 2, hub_sell_price=np.array([60.0]), hub_buy_price=np.array([30.0]), rho=1.0)
    rng = np.random.default_rng(2)
    duals = rng.normal(scale=2, size=v.duals.shape)
    duals[:, _col(v, "flow[0]")] = -90.0  # line imports cost more than the hub's 60
    v = replace(v, duals=duals, hats=rng.uniform(-0.2, 3, size=v.hats.shape))
    p = build_agent_subproblem(s.agent(2), v)
    x_ref, f_ref = qp_active_set_oracle(p.Q.toarray(), p.q, p.A.toarray(), p.b, p.lower, p.upper)
    d = solve_agent(s.agent(2), v)
    assert np.max(np.abs(d.values.ravel() - x_ref)) <= 1e-6
    assert d.objective == pytest.approx(f_ref + p.offset, abs=1e-6)
    assert d.column("hub_buy")[0] > 0


def test_role_specific_builders():
    s = scenario_from_dict(minimal_doc())
    with pytest.raises(ValueError):
        build_supplier_subproblem(s.agent(2), _view(s, 2))
    with pytest.raises(ValueError):
        build_consumer_subproblem(s.agent(1), _view(s, 1))
    assert build_supplier_subproblem(s.agent(1), _view(s, 1)).n == len(_view(s, 1).keys)


def test_malformed_view_rejected(two_node):
    v = _view(two_node, 1)
    with pytest.raises(SchemaError):
        solve_agent(two_node.agent(1), replace(v, duals=v.duals[:, :-1]))
    with pytest.raises(SchemaError):
        solve_agent(two_node.agent(1), replace(v, keys=v.keys[::-1]))
    bad = v.hats.copy()
    bad[0, 0] = np.nan
    with pytest.raises(SchemaError):
        solve_agent(two_node.agent(1), replace(v, hats=bad))


def test_objective_reevaluates(two_node):
    rng = np.random.default_rng(5)
    for n in two_node.network.nodes:
        v = _view(two_node, n)
        v = replace(v, duals=rng.normal(scale=10, size=v.duals.shape), rho=2.0)
        d = solve_agent(two_node.agent(n), v)
        assert agent_objective(two_node.agent(n), v, d.values) == pytest.approx(d.objective, abs=1e-8)


def test_deterministic(two_node):
    v = _view(two_node, 2)
    a, b = solve_agent(two_node.agent(2), v), solve_agent(two_node.agent(2), v)
    assert np.array_equal(a.values, b.values)


def test_large_penalty_keeps_a_feasible_hat(two_node):
    v = _view(two_node, 1)
    first = solve_agent(two_node.agent(1), v)
    again = solve_agent(two_node.agent(1), replace(v, hats=first.values, rho=1e7))
    assert np.max(np.abs(again.values - first.values)) <= 1e-4


@given(seed=st.integers(0, 10_000), eps=st.floats(1e-4, 0.5))
def test_decision_is_nonexpansive_in_hats(seed, eps):
    s = _TWO_NODE
    rng = np.random.default_rng(seed)
    n = int(rng.choice([1, 2]))
    v = _view(s, n, rho=float(rng.choice([0.5, 1.0, 2.0])))
    v = replace(v, duals=rng.normal(scale=10, size=v.duals.shape))
    dh = rng.normal(size=v.hats.shape)
    dh *= eps / np.linalg.norm(dh)
    a = solve_agent(s.agent(n), v)
    b = solve_agent(s.agent(n), replace(v, hats=v.hats + dh))
    # the decision is the proximal map of a convex function at the hats
    assert np.linalg.norm(b.values - a.values) <= eps + 1e-6

