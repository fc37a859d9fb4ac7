"""Nodal agent subproblems.

Each agent keeps local copies of its *coupling components* (own angle, line
exports, a copy of every neighbour's angle, its quantity and its external
trades) and solves, over the whole horizon,

    minimise   private(qty) + prices . trades + dual . x + rho/2 |x - hat|^2
    subject to nodal balance,  export_l = B_l (theta - theta_copy_l),  boxes

where ``private`` is the generation cost (supplier) or minus the consumption
value (consumer).  Only :class:`AgentView` enters an agent and only
:class:`AgentDecision` leaves it; neither carries cost or value coefficients.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields

import numpy as np

from .model import NodalAgent, SchemaError, Scenario
from .qp import QpBuilder, QpError, QpProblem, solve_qp

QP_TOL = 1e-9


class AgentSolveError(QpError):
    def __init__(self, node: int, cause: Exception):
        super().__init__(f"node {node}: {cause}")
        self.node = node
        self.cause = cause


def component_keys(agent: NodalAgent, lines: tuple[int, ...]) -> tuple[str, ...]:
    """Ordered coupling components of ``agent`` given its incident line ids."""
    keys = ["theta"]
    keys += [f"flow[{ln}]" for ln in lines]
    keys += [f"nbr_theta[{ln}]" for ln in lines]
    keys.append("qty")
    if agent.upstream_buy_max > 0 and not agent.is_supplier:
        keys.append("up_buy")
    if agent.upstream_sell_max > 0:
        keys.append("up_sell")
    if agent.hub_buy_max > 0 and not agent.is_supplier:
        keys.append("hub_buy")
    if agent.hub_sell_max > 0:
        keys.append("hub_sell")
    return tuple(keys)


def _series(v, T):
    return np.broadcast_to(np.asarray(v, float), (T,))


@dataclass(frozen=True)
class AgentView:
    """Everything an agent receives in one round.

    ``duals`` and ``hats`` have shape (T, k) in the order of ``keys``.
    Line data (``lines``, ``susceptance``, ``flow_bounds`` as export bounds,
    ``nbr_angle_bounds``) is public network information.  ``hub_caps``
    (T, 2) caps (hub_buy, hub_sell) at the hub's current offer.
    """

    node: int
    keys: tuple[str, ...]
    rho: float
    duals: np.ndarray
    hats: np.ndarray
    hub_sell_price: np.ndarray  # node pays this on hub_buy
    hub_buy_price: np.ndarray  # node receives this on hub_sell
    upstream_buy_price: np.ndarray
    upstream_sell_price: np.ndarray
    lines: tuple[int, ...]
    susceptance: tuple[float, ...]
    flow_bounds: tuple[tuple[float, float], ...]
    angle_bounds: tuple[float, float]
    nbr_angle_bounds: tuple[tuple[float, float], ...]
    hub_caps: np.ndarray | None = None

    @property
    def horizon(self) -> int:
        return int(np.shape(self.hats)[0])

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = v.tolist() if isinstance(v, np.ndarray) else v
        return out


@dataclass(frozen=True)
class AgentDecision:
    """Local copies chosen by one agent, shape (T, k) in ``keys`` order."""

    node: int
    keys: tuple[str, ...]
    values: np.ndarray
    objective: float
    balance_dual: np.ndarray | None = None  # multiplier of the local balance row, (T,)

    def column(self, key: str) -> np.ndarray:
        if key not in self.keys:
            return np.zeros(self.values.shape[0])
        return self.values[:, self.keys.index(key)]

    @property
    def theta(self):
        return self.column("theta")

    @property
    def qty(self):
        return self.column("qty")

    @property
    def exports(self) -> dict[int, np.ndarray]:
        """Line id -> export from this node (MW, positive away from it)."""
        return {int(k[5:-1]): self.values[:, i] for i, k in enumerate(self.keys) if k.startswith("flow[")}

    def to_dict(self) -> dict:
        bd = None if self.balance_dual is None else self.balance_dual.tolist()
        return {"node": self.node, "keys": list(self.keys), "values": self.values.tolist(),
                "objective": self.objective, "balance_dual": bd}


# ---------------------------------------------------------------------------


def _check_view(agent: NodalAgent, view: AgentView) -> int:
    expect = component_keys(agent, view.lines)
    if tuple(view.keys) != expect:
        raise SchemaError(f"node {agent.node}: view keys {view.keys} do not match {expect}")
    T = len(agent.qty_min)
    for name in ("duals", "hats"):
        arr = getattr(view, name)
        if arr is None or np.shape(arr) != (T, len(expect)):
            raise SchemaError(f"node {agent.node}: missing or misshaped {name}")
        if not np.all(np.isfinite(arr)):
            raise SchemaError(f"node {agent.node}: non-finite entries in {name}")
    nl = len(view.lines)
    if len(view.susceptance) != nl or len(view.flow_bounds) != nl or len(view.nbr_angle_bounds) != nl:
        raise SchemaError(f"node {agent.node}: line data does not match {nl} incident lines")
    return T


def _bounds(agent: NodalAgent, view: AgentView, T: int):
    k = len(view.keys)
    lo, hi = np.zeros((T, k)), np.zeros((T, k))
    nl = len(view.lines)
    lo[:, 0], hi[:, 0] = view.angle_bounds
    for j in range(nl):
        lo[:, 1 + j], hi[:, 1 + j] = view.flow_bounds[j]
        lo[:, 1 + nl + j], hi[:, 1 + nl + j] = view.nbr_angle_bounds[j]
    c = 1 + 2 * nl
    lo[:, c], hi[:, c] = agent.qty_min, agent.qty_max
    caps = view.hub_caps
    for j, key in enumerate(view.keys[c + 1:], start=c + 1):
        upper = {"up_buy": agent.upstream_buy_max, "up_sell": agent.upstream_sell_max,
                 "hub_buy": agent.hub_buy_max, "hub_sell": agent.hub_sell_max}[key]
        hi[:, j] = upper
        if caps is not None and key in ("hub_buy", "hub_sell"):
            col = 0 if key == "hub_buy" else 1
            hi[:, j] = np.minimum(upper, np.maximum(np.asarray(caps)[:, col], 0.0))
    return lo, hi


def _price_terms(view: AgentView, T: int) -> np.ndarray:
    """Fixed linear price per component and period (min form)."""
    c = np.zeros((T, len(view.keys)))
    table = {
        "up_buy": _series(view.upstream_buy_price, T),
        "up_sell": -_series(view.upstream_sell_price, T),
        "hub_buy": _series(view.hub_sell_price, T),
        "hub_sell": -_series(view.hub_buy_price, T),
    }
    for j, key in enumerate(view.keys):
        if key in table:
            c[:, j] = table[key]
    return c


def _build(agent: NodalAgent, view: AgentView) -> QpProblem:
    T = _check_view(agent, view)
    k = len(view.keys)
    lo, hi = _bounds(agent, view, T)
    qb = QpBuilder()
    x = qb.add_vars("x", (T, k), lo, hi)
    nl = len(view.lines)
    qcol = 1 + 2 * nl
    if agent.is_supplier:
        a2, a1 = agent.cost
        qb.add_quadratic(x[:, qcol], 2.0 * a2)
        qb.add_linear(x[:, qcol], a1)
    else:
        b1, b2 = agent.value
        qb.add_quadratic(x[:, qcol], 2.0 * b2)
        qb.add_linear(x[:, qcol], -b1)
    qb.add_linear(x, _price_terms(view, T) + np.asarray(view.duals, float))
    qb.add_proximal(x, np.asarray(view.hats, float), view.rho)

    # nodal balance
    sgn = 1.0 if agent.is_supplier else -1.0
    sign_of = {"qty": sgn, "up_buy": 1.0, "up_sell": -1.0, "hub_buy": 1.0, "hub_sell": -1.0}
    terms = [(x[:, 1 + j], -1.0) for j in range(nl)]
    terms += [(x[:, j], sign_of[key]) for j, key in enumerate(view.keys) if key in sign_of]
    qb.add_rows(terms, np.zeros(T))
    # local flow law on each incident line
    for j in range(nl):
        B = view.susceptance[j]
        qb.add_rows([(x[:, 1 + j], 1.0), (x[:, 0], -B), (x[:, 1 + nl + j], B)], np.zeros(T))
    return qb.build()


def build_supplier_subproblem(agent: NodalAgent, view: AgentView) -> QpProblem:
    """Supplier QP over all periods; variables are the (T, k) components."""
    if not agent.is_supplier:
        raise ValueError(f"node {agent.node} is not a supplier")
    return _build(agent, view)


def build_consumer_subproblem(agent: NodalAgent, view: AgentView) -> QpProblem:
    """Consumer QP over all periods; variables are the (T, k) components."""
    if agent.is_supplier:
        raise ValueError(f"node {agent.node} is not a consumer")
    return _build(agent, view)


def build_agent_subproblem(agent: NodalAgent, view: AgentView) -> QpProblem:
    return _build(agent, view)


def agent_objective(agent: NodalAgent, view: AgentView, values: np.ndarray) -> float:
    """Evaluate the agent objective at ``values`` directly from its terms."""
    values = np.asarray(values, float)
    T = values.shape[0]
    q = values[:, view.keys.index("qty")]
    private = np.sum(agent.cost_of(q)) if agent.is_supplier else -np.sum(agent.value_of(q))
    linear = np.sum((_price_terms(view, T) + view.duals) * values)
    prox = 0.5 * view.rho * np.sum((values - view.hats) ** 2)
    return float(private + linear + prox)


def solve_agent(agent: NodalAgent, view: AgentView, tol: float = QP_TOL) -> AgentDecision:
    p = _build(agent, view)
    try:
        s = solve_qp(p, tol)
    except QpError as e:
        raise AgentSolveError(agent.node, e) from e
    T = view.horizon
    values = s.x.reshape(T, len(view.keys))
    # balance rows are the first T equality rows
    return AgentDecision(agent.node, tuple(view.keys), values, s.objective, s.eq_duals[:T].copy())


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("HUBMARKET_THREADS", "1")))
    except ValueError:
        return 1


def solve_agent_round(scenario: Scenario, state) -> list[AgentDecision]:
    """Solve every agent against the same state snapshot.

    Set ``HUBMARKET_THREADS`` to solve agents on a thread pool.
    """
    views = [state.agent_view(n) for n in scenario.network.nodes]
    jobs = [(scenario.agent(v.node), v) for v in views]
    n = _threads()
    if n == 1 or len(jobs) == 1:
        return [solve_agent(a, v) for a, v in jobs]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(lambda job: solve_agent(*job), jobs))
