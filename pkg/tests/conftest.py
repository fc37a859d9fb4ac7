import copy
from pathlib import Path

import numpy as np
import pytest
import yaml
from hypothesis import HealthCheck, settings

from hubmarket.coordinator import AdmmConfig, HubPrices, run_admm, solve_centralized
from hubmarket.model import load_scenario, scenario_from_dict

ROOT = Path(__file__).resolve().parents[1]
DATA = Path(__file__).resolve().parent / "data"
SCENARIOS = ROOT / "scenarios"

settings.register_profile("repo", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
settings.load_profile("repo")

THREE_NODE_PRICES = HubPrices(np.full(4, 72.5), np.full(4, 40.0))


def two_node_doc():
    return yaml.safe_load((SCENARIOS / "two_node.yaml").read_text())


def scenario_with(doc_fn=two_node_doc, **edits):
    """Scenario from a document after ``edit(doc)`` callbacks."""
    doc = copy.deepcopy(doc_fn())
    for fn in edits.values():
        fn(doc)
    return scenario_from_dict(doc)


def minimal_doc(T=1, hub_access=False):
    """1 supplier, 1 consumer, 1 line."""
    doc = {
        "name": "minimal",
        "horizon": T,
        "network": {"reference_node": 1, "nodes": [1, 2],
                    "lines": [{"from": 1, "to": 2, "susceptance": 20.0, "flow_min": -10.0, "flow_max": 10.0}]},
        "agents": [
            {"node": 1, "kind": "supplier", "cost": {"a2": 0.1, "a1": 20.0}, "generation": {"min": 0.0, "max": 10.0}},
            {"node": 2, "kind": "consumer", "value": {"b1": 80.0, "b2": 1.0}, "demand": {"min": 0.0, "max": 8.0}},
        ],
        "hub": {"attach_node": 2, "eta_chp": 0.5, "gas_max": 50.0,
                "battery": {"E_min": 0.0, "E_max": 4.0, "E_0": 2.0, "eta_charge": 0.9, "eta_discharge": 0.9,
                            "P_ch_max": 1.0, "P_dis_max": 1.0},
                "sell_price": [40.0, 100.0], "buy_price": [10.0, 40.0], "sell_qty": [0.0, 5.0],
                "buy_qty": [0.0, 5.0]},
        "signals": {"gas_price": 26.0},
    }
    if hub_access:
        doc["agents"][1]["hub"] = {"buy": 5.0, "sell": 5.0}
    return doc


@pytest.fixture(scope="session")
def two_node():
    return load_scenario(SCENARIOS / "two_node.yaml")


@pytest.fixture(scope="session")
def three_node():
    return load_scenario(DATA / "three_node.yaml")


@pytest.fixture(scope="session")
def case5():
    return load_scenario(SCENARIOS / "case5.yaml")


@pytest.fixture(scope="session")
def case5_run(case5):
    """One full distributed run of the 5-node case with per-iteration timings."""
    import time

    times = []
    last = [time.perf_counter()]

    def tick(state):
        now = time.perf_counter()
        times.append(now - last[0])
        last[0] = now

    t0 = time.perf_counter()
    out = run_admm(case5, AdmmConfig(), on_iteration=tick)
    return out, times, time.perf_counter() - t0


@pytest.fixture(scope="session")
def three_node_pair(three_node):
    import time

    t0 = time.perf_counter()
    admm = run_admm(three_node, AdmmConfig(rho=1.0, eps_p=1e-2, eps_theta=1e-3, hub_prices=THREE_NODE_PRICES))
    seconds = time.perf_counter() - t0
    cent = solve_centralized(three_node, THREE_NODE_PRICES)
    return admm, cent, seconds


@pytest.fixture(scope="session")
def two_node_run(two_node):
    return run_admm(two_node)


def random_hub(seed):
    """Random hub, requests and gas prices with at most 12 binaries (T <= 3, gamma <= 2)."""
    from hubmarket.model import Battery, EnergyHub

    rng = np.random.default_rng(seed)
    T = int(rng.integers(1, 4))
    gamma = int(rng.integers(1, 3))
    e_max = float(rng.uniform(2, 10))
    bat = Battery(e_min=0.0, e_max=e_max, e_0=float(rng.uniform(0, e_max)), eta_charge=float(rng.uniform(0.8, 1)),
                  eta_discharge=float(rng.uniform(0.8, 1)), charge_max=float(rng.uniform(0.5, 3)),
                  discharge_max=float(rng.uniform(0.5, 3)))
    smin = float(rng.uniform(30, 60))
    bmin = float(rng.uniform(5, 30))
    hub = EnergyHub(attach_node=1, eta_chp=float(rng.uniform(0.3, 0.9)), battery=bat,
                    sell_price_min=smin, sell_price_max=smin + float(rng.uniform(10, 50)),
                    buy_price_min=bmin, buy_price_max=bmin + float(rng.uniform(10, 40)),
                    sell_qty_min=0.0, sell_qty_max=float(rng.uniform(2, 10)),
                    buy_qty_min=0.0, buy_qty_max=float(rng.uniform(2, 10)), gas_max=float(rng.uniform(5, 30)))
    request = rng.uniform(0, 8, size=(T, 2))
    gas = rng.uniform(10, 40, size=T)
    rho = float(rng.choice([0.0, 0.5, 1.0, 2.0]))
    return hub, request, gas, rho, gamma


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
