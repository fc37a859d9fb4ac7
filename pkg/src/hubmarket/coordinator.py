"""Regional coordination: the RSO projection, dual updates and the ADMM loop.

One iteration runs, in order: the hub prices against the region's last
requests, every agent solves its local problem, the RSO projects the agents'
copies onto the network-feasible set, duals move by ``rho/2`` times the
local-minus-projected gap, and the line-trade and angle residuals are checked.

The centralized benchmark solves the whole region as one QP with the hub
prices held fixed, and :func:`build_welfare_report` turns either outcome into
per-player accounting.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp

from .agents import AgentDecision, AgentView, component_keys, solve_agent_round
from .hub import HubDecision, _clean, deliverability_block, gas_limit, settle_hub, solve_hub_round
from .model import Scenario
from .network import NetworkLayout
from .qp import QpInfeasible, QpProblem, solve_qp

log = logging.getLogger(__name__)


class NotConverged(RuntimeError):
    def __init__(self, outcome: "MarketOutcome"):
        super().__init__(f"ADMM stopped after {outcome.iterations} iterations without meeting the thresholds")
        self.outcome = outcome


class HubPrices(NamedTuple):
    """Per-period hub prices: ``sell`` is what the hub charges, ``buy`` what it pays."""

    sell: np.ndarray
    buy: np.ndarray

    @classmethod
    def of(cls, prices, T: int) -> "HubPrices":
        if isinstance(prices, HubDecision):
            return cls(np.asarray(prices.sell_price, float), np.asarray(prices.buy_price, float))
        sell, buy = prices
        return cls(np.broadcast_to(np.asarray(sell, float), (T,)).copy(),
                   np.broadcast_to(np.asarray(buy, float), (T,)).copy())


@dataclass(frozen=True)
class AdmmConfig:
    rho: float = 1.0
    eps_p: float = 1e-2
    eps_theta: float = 1e-3
    max_iter: int = 200
    gamma: int = 4
    qp_tol: float = 1e-9
    hub_prices: HubPrices | None = None  # hold hub prices fixed and skip the hub step
    settle: bool = True  # re-dispatch the hub against the cleared trades
    hub_consensus: bool = False  # extra multipliers pulling hub offers onto the requests

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError("rho must be > 0")
        if not (self.eps_p > 0 and self.eps_theta > 0):
            raise ValueError("stopping thresholds must be > 0")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.gamma < 1:
            raise ValueError("gamma must be >= 1")


def _hub_active(s: Scenario) -> bool:
    net = s.network
    if s.hub is None or s.hub.attach_node not in net.nodes:
        return False
    a = s.agent(s.hub.attach_node)
    return (a.hub_buy_max > 0 and not a.is_supplier) or a.hub_sell_max > 0


@dataclass
class AdmmState:
    """Mutable iterate owned by :func:`run_admm`.

    ``hats``, ``duals`` and ``decisions`` are keyed by node id; arrays have
    shape (T, k) in the order of the node's component keys.
    """

    scenario: Scenario
    config: AdmmConfig
    layout: NetworkLayout
    z: np.ndarray  # stacked network vector (RSO hats)
    hats: dict
    duals: dict
    decisions: dict = field(default_factory=dict)
    hub: HubDecision | None = None
    hub_prices: HubPrices | None = None
    hub_caps: np.ndarray | None = None  # (T, 2) caps on (hub_buy, hub_sell)
    hub_duals: np.ndarray | None = None  # (T, 2) consensus multipliers on the hub's (sell, buy) offers
    balance_duals: np.ndarray | None = None
    k: int = 0
    history: list = field(default_factory=list)

    @property
    def rho(self) -> float:
        return self.config.rho

    @property
    def T(self) -> int:
        return self.scenario.horizon

    def keys(self, node: int) -> tuple[str, ...]:
        return tuple(c.key for c in self.layout.components[node])

    def hub_requests(self) -> np.ndarray:
        """Region's aggregate (purchase from hub, sale to hub) per period."""
        out = np.zeros((self.T, 2))
        for d in self.decisions.values():
            out[:, 0] += d.column("hub_buy")
            out[:, 1] += d.column("hub_sell")
        return out

    def agent_view(self, node: int) -> AgentView:
        s, net = self.scenario, self.scenario.network
        T = self.T
        inc = net.incident(node)
        lines = tuple(ln for ln, _ in inc)

        def angle(n):
            if n == net.reference_node:
                return (0.0, 0.0)
            i = net.index(n)
            return (float(net.angle_min[i]), float(net.angle_max[i]))

        fb = []
        for ln, sign in inc:
            L = net.lines[ln]
            fb.append((L.flow_min, L.flow_max) if sign > 0 else (-L.flow_max, -L.flow_min))
        prices = self.hub_prices if self.hub_prices is not None else HubPrices(np.zeros(T), np.zeros(T))
        caps = None
        if self.hub_caps is not None and node == s.hub.attach_node:
            caps = self.hub_caps.copy()
        return AgentView(
            node=node,
            keys=self.keys(node),
            rho=self.rho,
            duals=self.duals[node].copy(),
            hats=self.hats[node].copy(),
            hub_sell_price=np.asarray(prices.sell, float).copy(),
            hub_buy_price=np.asarray(prices.buy, float).copy(),
            upstream_buy_price=s.signals.buy_price(node, T),
            upstream_sell_price=s.signals.sell_price(node, T),
            lines=lines,
            susceptance=tuple(net.lines[ln].susceptance for ln in lines),
            flow_bounds=tuple(fb),
            angle_bounds=angle(node),
            nbr_angle_bounds=tuple(angle(net.neighbour(ln, node)) for ln in lines),
            hub_caps=caps,
        )


def init_state(scenario: Scenario, config: AdmmConfig) -> AdmmState:
    """Duals at zero, hats at the midpoint of every box, no hub requests."""
    layout = NetworkLayout(scenario)
    lo, hi = layout.stacked_bounds()
    z = 0.5 * (lo + hi)
    hats = {n: layout.project(n, z) for n in scenario.network.nodes}
    duals = {n: np.zeros_like(h) for n, h in hats.items()}
    for n in scenario.network.nodes:
        keys = tuple(c.key for c in layout.components[n])
        lines = tuple(ln for ln, _ in scenario.network.incident(n))
        assert keys == component_keys(scenario.agent(n), lines)
    prices = None
    if config.hub_prices is not None:
        prices = HubPrices.of(config.hub_prices, scenario.horizon)
    return AdmmState(scenario, config, layout, z, hats, duals, hub_prices=prices,
                     hub_duals=np.zeros((scenario.horizon, 2)))


# ---------------------------------------------------------------------------
# RSO step


def _hub_physics(scenario: Scenario, lay: NetworkLayout, A, b):
    """Append the hub's delivery constraints to the network rows.

    Returns the extended ``(A, b)`` and the bounds of the appended hub
    variables (empty when the scenario has no active hub).
    """
    if not _hub_active(scenario):
        return A, b, np.zeros(0), np.zeros(0)
    n = A.shape[1]
    cols = np.arange(lay.nv)
    sell_cols = lay.stacked(cols[lay.block("hub_buy")])
    buy_cols = lay.stacked(cols[lay.block("hub_sell")])
    Ah, bh, lo, hi = deliverability_block(scenario.hub, sell_cols, buy_cols, n)
    A = sp.vstack([sp.hstack([A, sp.csr_matrix((A.shape[0], Ah.shape[1] - n))]), Ah], format="csr")
    return A, np.concatenate([b, bh]), lo, hi


class _RsoStructure:
    """Constant part of the RSO QP (matrix, bounds, component map)."""

    def __init__(self, layout: NetworkLayout, scenario: Scenario):
        self.layout = layout
        T, nv = layout.T, layout.nv
        A, b = layout.stacked_equalities()
        self.A, self.b, self.hub_lo, self.hub_hi = _hub_physics(scenario, layout, A, b)
        self.lower, self.upper = layout.stacked_bounds()
        # each node's components as global indices (T, k) and signs (k,)
        self.maps = {}
        qdiag = np.zeros(T * nv + self.hub_lo.size)
        for n, comps in layout.components.items():
            local = np.array([c.var for c in comps])
            idx = layout.stacked(local)
            sign = np.array([c.sign for c in comps])
            self.maps[n] = (idx, sign)
            np.add.at(qdiag, idx.ravel(), 1.0)
        self.qdiag = qdiag


def _rso_structure(state: AdmmState) -> _RsoStructure:
    st = getattr(state, "_rso", None)
    if st is None:
        st = _RsoStructure(state.layout, state.scenario)
        state._rso = st
    return st


def build_rso_subproblem(scenario: Scenario, state: AdmmState) -> QpProblem:
    """Projection of the agents' copies onto the network-feasible set.

    Minimises ``sum_k -dual_k (s_k z_k) + rho/2 (x_k - s_k z_k)^2`` over the
    network vector ``z`` subject to nodal balance, the DC flow law and all
    boxes, where ``s_k`` maps component ``k`` to its network variable.  With
    an active hub the hub's balance, battery and gas limits are appended on
    extra variables so that cleared hub trades stay deliverable; gas is
    unavailable in periods where the hub's sell price is below its
    conversion cost.
    """
    st = _rso_structure(state)
    rho = state.rho
    q = np.zeros(st.qdiag.size)
    offset = 0.0
    for n, (idx, sign) in st.maps.items():
        x = state.decisions[n].values if n in state.decisions else state.hats[n]
        lam = state.duals[n]
        np.add.at(q, idx.ravel(), (-(lam + rho * x) * sign).ravel())
        offset += 0.5 * rho * float(np.sum(x**2))
    lower, upper = st.lower, st.upper
    if state.hub_caps is not None:
        lower, upper = NetworkLayout(scenario, state.hub_caps).stacked_bounds()
    hub_hi = st.hub_hi
    if hub_hi.size and state.hub_prices is not None:
        hub_hi = hub_hi.copy()
        T = state.T
        hub_hi[:T] = gas_limit(scenario.hub, scenario.signals.gas_price, state.hub_prices.sell)
    lower = np.concatenate([lower, st.hub_lo])
    upper = np.concatenate([upper, hub_hi])
    Q = sp.diags(rho * st.qdiag, format="csr")
    return QpProblem(Q, q, st.A, st.b, lower, upper, (), offset)


def solve_rso(scenario: Scenario, state: AdmmState) -> np.ndarray:
    p = build_rso_subproblem(scenario, state)
    s = solve_qp(p, state.config.qp_tol)
    state.balance_duals = _balance_duals(state.layout, s.eq_duals)
    return s.x[: state.layout.T * state.layout.nv]


def _balance_duals(layout: NetworkLayout, y: np.ndarray) -> np.ndarray:
    rows = layout.N + layout.L
    return np.asarray(y)[: layout.T * rows].reshape(layout.T, rows)[:, : layout.N].copy()


def nodal_prices(state: AdmmState) -> np.ndarray:
    """Distributed nodal prices (T, N).

    At consensus the marginal value of energy at a node splits between the
    RSO's balance multiplier and the agent's own one; their sum plays the
    role of the centralized balance multiplier.
    """
    y = np.array(state.balance_duals, float)
    for i, n in enumerate(state.scenario.network.nodes):
        d = state.decisions.get(n)
        if d is not None and d.balance_dual is not None:
            y[:, i] += d.balance_dual
    return y


def update_duals(state: AdmmState, rho: float | None = None) -> dict:
    """``dual += rho/2 * (local - hat)`` for every component of every node."""
    rho = state.rho if rho is None else rho
    for n, d in state.decisions.items():
        state.duals[n] = state.duals[n] + 0.5 * rho * (d.values - state.hats[n])
    return state.duals


def hub_gap(state: AdmmState) -> np.ndarray:
    """Hub offers minus the region's requests, (T, 2) as (sell, buy)."""
    if state.hub is None:
        return np.zeros((state.T, 2))
    offer = np.column_stack([state.hub.sell_qty, state.hub.buy_qty])
    return offer - state.hub_requests()


def update_hub_duals(state: AdmmState, rho: float | None = None) -> np.ndarray:
    """``hub_dual += rho/2 * (offer - request)``, the same step as the agent duals."""
    rho = state.rho if rho is None else rho
    state.hub_duals = state.hub_duals + 0.5 * rho * hub_gap(state)
    return state.hub_duals


def compute_residuals(state: AdmmState) -> tuple[float, float]:
    """Max-abs gap between local copies and hats on line trades and angles."""
    r_p = r_t = 0.0
    for n, d in state.decisions.items():
        gap = np.abs(d.values - state.hats[n])
        for j, key in enumerate(d.keys):
            if key.startswith("flow["):
                r_p = max(r_p, float(np.max(gap[:, j], initial=0.0)))
            elif key == "theta":
                r_t = max(r_t, float(np.max(gap[:, j], initial=0.0)))
    return r_p, r_t


def coupling_residual(state: AdmmState) -> float:
    """Max-abs gap over every coupled power quantity (lines, quantities,
    upstream and hub trades; with ``hub_consensus`` also the hub's offers
    against the requests)."""
    r = 0.0
    if state.config.hub_consensus:
        r = float(np.max(np.abs(hub_gap(state)), initial=0.0))
    for n, d in state.decisions.items():
        for j, key in enumerate(d.keys):
            if "theta" not in key:
                r = max(r, float(np.max(np.abs(d.values[:, j] - state.hats[n][:, j]), initial=0.0)))
    return r


# ---------------------------------------------------------------------------
# outcome


@dataclass
class MarketOutcome:
    """Cleared market in network-vector form plus hub schedule and trace.

    Arrays are (T, N) per node or (T, L) per line.  ``node_prices`` are the
    nodal balance multipliers ($/MWh).
    """

    mode: str
    converged: bool
    iterations: int
    theta: np.ndarray
    flow: np.ndarray
    qty: np.ndarray
    up_buy: np.ndarray
    up_sell: np.ndarray
    hub_buy: np.ndarray
    hub_sell: np.ndarray
    node_prices: np.ndarray
    hub_prices: HubPrices
    hub: HubDecision | None
    objective: float
    residuals: list = field(default_factory=list)  # (r_P, r_theta, objective) per iteration
    scenario_name: str = ""
    seconds: float = 0.0
    hub_caps: np.ndarray | None = None  # (T, 2) hub offers (sell, buy) that capped the last round

    @property
    def horizon(self) -> int:
        return self.theta.shape[0]

    def check(self) -> "MarketOutcome":
        if not self.converged:
            raise NotConverged(self)
        return self

    def line_price(self, scenario: Scenario) -> np.ndarray:
        """Trade price on each line: mean of its endpoint nodal prices."""
        net = scenario.network
        out = np.zeros(self.flow.shape)
        for k, ln in enumerate(net.lines):
            out[:, k] = 0.5 * (self.node_prices[:, net.index(ln.from_node)]
                               + self.node_prices[:, net.index(ln.to_node)])
        return out


def _network_objective(scenario: Scenario, lay: NetworkLayout, Z: np.ndarray, prices: HubPrices) -> float:
    """Regional cost: cost - value + upstream and hub payments."""
    s, T = scenario, scenario.horizon
    total = 0.0
    for i, n in enumerate(s.network.nodes):
        a = s.agent(n)
        q = Z[:, lay.var("qty", i)]
        total += float(np.sum(a.cost_of(q))) if a.is_supplier else -float(np.sum(a.value_of(q)))
        total += float(s.signals.buy_price(n, T) @ Z[:, lay.var("up_buy", i)])
        total -= float(s.signals.sell_price(n, T) @ Z[:, lay.var("up_sell", i)])
        total += float(prices.sell @ Z[:, lay.var("hub_buy", i)])
        total -= float(prices.buy @ Z[:, lay.var("hub_sell", i)])
    return total


def _outcome(mode, scenario, lay, z, prices, hub, y_bal, converged, iterations, residuals, seconds):
    Z = lay.unstack(z)
    blk = {name: Z[:, lay.block(name)].copy() for name in ("theta", "flow", "qty", "up_buy", "up_sell",
                                                             "hub_buy", "hub_sell")}
    return MarketOutcome(
        mode=mode, converged=converged, iterations=iterations, node_prices=y_bal, hub_prices=prices, hub=hub,
        objective=_network_objective(scenario, lay, Z, prices), residuals=list(residuals),
        scenario_name=scenario.name, seconds=seconds, **blk,
    )


def _settled_hub(scenario: Scenario, z: np.ndarray, lay: NetworkLayout, prices: HubPrices, fallback):
    Z = lay.unstack(z)
    sell = Z[:, lay.block("hub_buy")].sum(axis=1)
    buy = Z[:, lay.block("hub_sell")].sum(axis=1)
    h = scenario.hub
    sell = _clean(np.clip(sell, 0.0, None))
    buy = _clean(np.clip(buy, 0.0, None))
    settled = settle_hub(h, sell, buy, scenario.signals.gas_price, prices.sell, prices.buy)
    return settled if settled is not None else fallback


def admm_iteration(scenario: Scenario, state: AdmmState) -> tuple[float, float]:
    """One pass: hub, agents, RSO, duals, residuals."""
    cfg = state.config
    if cfg.hub_prices is None and _hub_active(scenario):
        state.hub = solve_hub_round(scenario, state)
        state.hub_prices = HubPrices(state.hub.sell_price, state.hub.buy_price)
        state.hub_caps = np.column_stack([state.hub.sell_qty, state.hub.buy_qty])
    elif state.hub_prices is None:
        h = scenario.hub
        T = state.T
        state.hub_prices = HubPrices(np.full(T, h.sell_price_max), np.full(T, h.buy_price_min))
    decisions = solve_agent_round(scenario, state)
    state.decisions = {d.node: d for d in decisions}
    state.z = solve_rso(scenario, state)
    state.hats = {n: state.layout.project(n, state.z) for n in scenario.network.nodes}
    update_duals(state)
    if state.hub is not None and cfg.hub_prices is None and cfg.hub_consensus:
        update_hub_duals(state)
    r_p, r_t = compute_residuals(state)
    obj = _network_objective(scenario, state.layout, state.layout.unstack(state.z), state.hub_prices)
    state.k += 1
    state.history.append((r_p, r_t, obj))
    return r_p, r_t


def run_admm(scenario: Scenario, config: AdmmConfig | None = None, on_iteration=None) -> MarketOutcome:
    """Run the distributed market until both residuals meet their thresholds.

    Returns the outcome in every case; ``converged`` is False when
    ``max_iter`` was reached first (see :meth:`MarketOutcome.check`).
    ``on_iteration(state)`` is called after every iteration.
    """
    config = config or AdmmConfig()
    t0 = time.perf_counter()
    state = init_state(scenario, config)
    converged = False
    while state.k < config.max_iter:
        r_p, r_t = admm_iteration(scenario, state)
        log.debug("iter %d r_P=%.3g r_theta=%.3g", state.k, r_p, r_t)
        if on_iteration is not None:
            on_iteration(state)
        # line and angle residuals are the published stopping rule; the
        # remaining power couplings (quantities, upstream and hub trades) must
        # also agree, otherwise the hub trades can stall off consensus
        if r_p <= config.eps_p and r_t <= config.eps_theta and coupling_residual(state) <= config.eps_p:
            converged = True
            break
    hub = state.hub
    if _hub_active(scenario) and config.settle:
        hub = _settled_hub(scenario, state.z, state.layout, state.hub_prices, hub)
    out = _outcome("distributed", scenario, state.layout, state.z, state.hub_prices, hub, nodal_prices(state),
                   converged, state.k, state.history, time.perf_counter() - t0)
    out.hub_caps = None if state.hub_caps is None else state.hub_caps.copy()
    return out


# ---------------------------------------------------------------------------
# centralized benchmark


def build_centralized_problem(scenario: Scenario, hub_prices, caps=None) -> tuple[QpProblem, NetworkLayout]:
    """Whole-region QP with fixed hub prices; ``caps`` optionally limits hub trades."""
    s, T = scenario, scenario.horizon
    prices = HubPrices.of(hub_prices, T)
    lay = NetworkLayout(s, caps)
    A, b = lay.stacked_equalities()
    lo, hi = lay.stacked_bounds()
    qd = np.zeros((T, lay.nv))
    c = np.zeros((T, lay.nv))
    for i, n in enumerate(s.network.nodes):
        a = s.agent(n)
        v = lay.var("qty", i)
        if a.is_supplier:
            qd[:, v] = 2 * a.cost[0]
            c[:, v] = a.cost[1]
        else:
            qd[:, v] = 2 * a.value[1]
            c[:, v] = -a.value[0]
        c[:, lay.var("up_buy", i)] = s.signals.buy_price(n, T)
        c[:, lay.var("up_sell", i)] = -s.signals.sell_price(n, T)
        c[:, lay.var("hub_buy", i)] = prices.sell
        c[:, lay.var("hub_sell", i)] = -prices.buy
    A, b, hlo, hhi = _hub_physics(s, lay, A, b)
    if hhi.size:
        hhi[:T] = gas_limit(s.hub, s.signals.gas_price, prices.sell)
    qd = np.concatenate([qd.ravel(), np.zeros(hlo.size)])
    c = np.concatenate([c.ravel(), np.zeros(hlo.size)])
    Q = sp.diags(qd, format="csr")
    return QpProblem(Q, c, A, b, np.concatenate([lo, hlo]), np.concatenate([hi, hhi])), lay


def solve_centralized(scenario: Scenario, hub_prices, caps=None, tol: float = 1e-9,
                      settle: bool = True) -> MarketOutcome:
    """Single-QP market clearing with the hub prices as data.

    Raises
    ------
    QpInfeasible
        The network cannot balance within the scenario bounds.
    """
    t0 = time.perf_counter()
    T = scenario.horizon
    prices = HubPrices.of(hub_prices, T)
    p, lay = build_centralized_problem(scenario, prices, caps)
    s = solve_qp(p, tol)
    x = s.x[: T * lay.nv]
    hub = None
    if _hub_active(scenario) and settle:
        hub = _settled_hub(scenario, x, lay, prices, None)
    return _outcome("centralized", scenario, lay, x, prices, hub, _balance_duals(lay, s.eq_duals), True, 1, [],
                    time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# welfare


@dataclass(frozen=True)
class PlayerWelfare:
    player: str
    v_or_c: float  # value for consumers, cost for suppliers and the hub, net value for the region
    revenue: float
    sc: float


@dataclass
class WelfareReport:
    mode: str
    players: list
    objective: float  # regional objective of the cleared point (cost minus value plus payments)

    def player(self, name: str) -> PlayerWelfare:
        for p in self.players:
            if p.player == name:
                return p
        raise KeyError(name)

    @property
    def regional(self) -> PlayerWelfare:
        return self.player("Region")


def node_accounts(outcome: MarketOutcome, scenario: Scenario) -> list[tuple[str, str, float, float]]:
    """(label, kind, value-or-cost, revenue) per node."""
    s, net, T = scenario, scenario.network, outcome.horizon
    lp = outcome.line_price(s)
    out = []
    for i, n in enumerate(net.nodes):
        a = s.agent(n)
        q = outcome.qty[:, i]
        vc = float(np.sum(a.cost_of(q))) if a.is_supplier else float(np.sum(a.value_of(q)))
        rev = 0.0
        for ln, sign in net.incident(n):
            rev += float(np.sum(lp[:, ln] * sign * outcome.flow[:, ln]))
        rev += float(s.signals.sell_price(n, T) @ outcome.up_sell[:, i])
        rev -= float(s.signals.buy_price(n, T) @ outcome.up_buy[:, i])
        rev += float(outcome.hub_prices.buy @ outcome.hub_sell[:, i])
        rev -= float(outcome.hub_prices.sell @ outcome.hub_buy[:, i])
        out.append((a.label or str(n), a.kind, vc, rev))
    return out


def build_welfare_report(outcome: MarketOutcome, scenario: Scenario) -> WelfareReport:
    """Per-node, hub and regional value/cost, revenue and social welfare.

    Line trades settle at the mean of the endpoint nodal prices, so they
    cancel in the regional total; upstream trades settle at the signal
    prices and hub trades at the hub's prices.
    """
    players = []
    net_value = total_rev = 0.0
    for label, kind, vc, rev in node_accounts(outcome, scenario):
        sc = rev - vc if kind == "supplier" else vc + rev
        players.append(PlayerWelfare(label, vc, rev, sc))
        net_value += -vc if kind == "supplier" else vc
        total_rev += rev
    hub_sell = outcome.hub_buy.sum(axis=1)
    hub_buy = outcome.hub_sell.sum(axis=1)
    hub_rev = float(outcome.hub_prices.sell @ hub_sell - outcome.hub_prices.buy @ hub_buy)
    gas_cost = 0.0
    if outcome.hub is not None:
        gas = np.asarray(scenario.signals.gas_price, float)
        gas_cost = float(np.broadcast_to(gas, outcome.hub.gas.shape) @ outcome.hub.gas)
    players.append(PlayerWelfare("EH", gas_cost, hub_rev, hub_rev - gas_cost))
    players.append(PlayerWelfare("Region", net_value, total_rev, net_value + total_rev))
    return WelfareReport(outcome.mode, players, outcome.objective)
