"""Energy hub price-setting problem.

The hub sells to the region at ``sell_price`` and buys from it at
``buy_price``; both prices live on a binary-expansion grid so that the
price-times-quantity revenue becomes linear in auxiliary variables.  Over the
horizon the hub chooses prices, offered quantities, gas purchases and a
battery schedule subject to::

    buy + eta_chp * gas + discharge - charge = sell            (electric balance)
    E[t+1] = E[t] + eta_charge * charge - discharge / eta_discharge
    E[0] = E[T] = E_0,  E_min <= E <= E_max

and pays a proximal penalty ``rho/2 |offer - request|^2`` toward the
quantities the region asked for in the previous round.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .miqp import BinaryExpansion, MiqpProblem, build_binary_expansion, solve_miqp
from .model import EnergyHub, Scenario
from .qp import QpBuilder, solve_qp


@dataclass
class HubDecision:
    sell_price: np.ndarray  # $/MWh, hub -> region
    buy_price: np.ndarray  # $/MWh, region -> hub
    sell_qty: np.ndarray  # MW offered to the region
    buy_qty: np.ndarray  # MW bought from the region
    gas: np.ndarray  # MW of gas input
    charge: np.ndarray
    discharge: np.ndarray
    soc: np.ndarray  # MWh, T + 1 entries, soc[0] = E_0
    profit: float
    nodes: int = 0

    @property
    def soc_end(self) -> np.ndarray:
        """State of charge at the end of each period."""
        return self.soc[1:]


@dataclass(frozen=True)
class HubMiqp(MiqpProblem):
    """Hub MIQP with the index map needed to decode a solution."""

    idx: dict = None
    sell_exp: BinaryExpansion = None
    buy_exp: BinaryExpansion = None
    rho: float = 0.0
    request: np.ndarray = None
    gas_price: np.ndarray = None
    hub: EnergyHub = None
    dual: np.ndarray = None


def _physical_block(qb: QpBuilder, hub: EnergyHub, T: int, sell_bounds, buy_bounds, gas_max=None):
    bat = hub.battery
    gas_max = hub.gas_max if gas_max is None else gas_max
    idx = {
        "sell": qb.add_vars("sell", T, *sell_bounds),
        "buy": qb.add_vars("buy", T, *buy_bounds),
        "gas": qb.add_vars("gas", T, 0.0, gas_max),
        "ch": qb.add_vars("ch", T, 0.0, bat.charge_max),
        "dis": qb.add_vars("dis", T, 0.0, bat.discharge_max),
    }
    e_lo = np.full(T + 1, bat.e_min)
    e_hi = np.full(T + 1, bat.e_max)
    e_lo[0] = e_hi[0] = bat.e_0
    e_lo[T] = e_hi[T] = bat.e_0
    idx["soc"] = qb.add_vars("E", T + 1, e_lo, e_hi)
    qb.add_rows([(idx["buy"], 1.0), (idx["gas"], hub.eta_chp), (idx["dis"], 1.0), (idx["ch"], -1.0),
                 (idx["sell"], -1.0)], np.zeros(T))
    qb.add_rows([(idx["soc"][1:], 1.0), (idx["soc"][:-1], -1.0), (idx["ch"], -bat.eta_charge),
                 (idx["dis"], 1.0 / bat.eta_discharge)], np.zeros(T))
    return idx


def build_hub_subproblem(hub: EnergyHub, regional_qty, gas_price, rho: float, gamma: int,
                         dual=None) -> HubMiqp:
    """Assemble the linearised hub problem in minimisation form.

    Parameters
    ----------
    regional_qty : array (T, 2)
        Region's requested (purchase from hub, sale to hub) per period.
    gas_price : array (T,)
    dual : array (T, 2), optional
        Consensus multipliers on the (sell, buy) offers, added as linear
        terms ``dual . offer``.  Zero by default.
    """
    request = np.asarray(regional_qty, float)
    if request.ndim != 2 or request.shape[1] != 2:
        raise ValueError("regional_qty must have shape (T, 2)")
    if rho < 0:
        raise ValueError("rho must be >= 0")
    T = request.shape[0]
    gas_price = np.broadcast_to(np.asarray(gas_price, float), (T,))
    sell_exp, _ = build_binary_expansion(hub.sell_price_min, hub.sell_price_max, gamma, hub.sell_qty_max, T)
    buy_exp, _ = build_binary_expansion(hub.buy_price_min, hub.buy_price_max, gamma, hub.buy_qty_max, T)

    qb = QpBuilder()
    idx = _physical_block(qb, hub, T, (hub.sell_qty_min, hub.sell_qty_max), (hub.buy_qty_min, hub.buy_qty_max))
    idx["w_sell"], idx["z_sell"] = sell_exp.attach(qb, idx["sell"], "s")
    idx["w_buy"], idx["z_buy"] = buy_exp.attach(qb, idx["buy"], "b")

    # maximise revenue - gas cost - penalty  ->  minimise the negative
    qb.add_linear(idx["sell"], -sell_exp.lambda_min)
    qb.add_linear(idx["w_sell"], -sell_exp.delta * sell_exp.weights)
    qb.add_linear(idx["buy"], buy_exp.lambda_min)
    qb.add_linear(idx["w_buy"], buy_exp.delta * buy_exp.weights)
    qb.add_linear(idx["gas"], gas_price)
    qb.add_proximal(idx["sell"], request[:, 0], rho)
    qb.add_proximal(idx["buy"], request[:, 1], rho)
    dual = np.zeros((T, 2)) if dual is None else np.asarray(dual, float).reshape(T, 2)
    qb.add_linear(idx["sell"], dual[:, 0])
    qb.add_linear(idx["buy"], dual[:, 1])

    binary = np.concatenate([idx["z_sell"].ravel(), idx["z_buy"].ravel()])
    return HubMiqp(qb.build(), binary, idx, sell_exp, buy_exp, float(rho), request, gas_price, hub, dual)


def price_corner(p: HubMiqp) -> np.ndarray:
    """Binary assignment for the top sell price and the bottom buy price.

    Prices enter the hub objective only through revenue, which rises with
    the sell price and falls with the buy price for any fixed quantities, so
    this assignment is optimal; it seeds branch and bound.
    """
    z = np.zeros(p.num_binaries)
    z[: p.idx["z_sell"].size] = 1.0
    return z


def hub_profit(hub_problem: HubMiqp, d: HubDecision) -> float:
    """Evaluate the linearised hub objective (profit form) from a decision's
    prices and quantities, without touching the QP matrices."""
    p = hub_problem
    pen = 0.5 * p.rho * (np.sum((d.sell_qty - p.request[:, 0]) ** 2) + np.sum((d.buy_qty - p.request[:, 1]) ** 2))
    mult = float(np.sum(p.dual[:, 0] * d.sell_qty) + np.sum(p.dual[:, 1] * d.buy_qty))
    return float(np.sum(d.sell_price * d.sell_qty) - np.sum(d.buy_price * d.buy_qty)
                 - np.sum(p.gas_price * d.gas) - pen - mult)


def _clean(v: np.ndarray) -> np.ndarray:
    """Copy with interior-point noise below 1e-9 snapped to zero."""
    v = np.array(v, float)
    v[np.abs(v) < 1e-9] = 0.0
    return v


def soc_trajectory(battery, charge, discharge) -> np.ndarray:
    """State of charge from ``E_0`` by the battery recursion, period by period."""
    e = np.empty(len(charge) + 1)
    e[0] = battery.e_0
    for t in range(len(charge)):
        e[t + 1] = e[t] + battery.eta_charge * charge[t] - discharge[t] / battery.eta_discharge
    return e


def decode_hub(p: HubMiqp, x: np.ndarray, objective: float, nodes: int = 0) -> HubDecision:
    idx = p.idx
    zs = np.rint(x[idx["z_sell"]])
    zb = np.rint(x[idx["z_buy"]])
    ch, dis = _clean(x[idx["ch"]]), _clean(x[idx["dis"]])
    return HubDecision(
        sell_price=p.sell_exp.price(zs),
        buy_price=p.buy_exp.price(zb),
        sell_qty=_clean(x[idx["sell"]]),
        buy_qty=_clean(x[idx["buy"]]),
        gas=_clean(x[idx["gas"]]),
        charge=ch,
        discharge=dis,
        soc=soc_trajectory(p.hub.battery, ch, dis),
        profit=-objective,
        nodes=nodes,
    )


def solve_hub(hub: EnergyHub, regional_qty, gas_price, rho: float, gamma: int, tol: float = 1e-6,
              dual=None) -> HubDecision:
    p = build_hub_subproblem(hub, regional_qty, gas_price, rho, gamma, dual)
    sol = solve_miqp(p, tol=tol, candidates=[price_corner(p)])
    return decode_hub(p, sol.x, sol.objective, sol.nodes)


def solve_hub_round(scenario: Scenario, state) -> HubDecision:
    """Hub step of one iteration: price against the region's last requests."""
    cfg = state.config
    return solve_hub(scenario.hub, state.hub_requests(), scenario.signals.gas_price, cfg.rho, cfg.gamma,
                     dual=state.hub_duals)


def gas_limit(hub: EnergyHub, gas_price, sell_price) -> np.ndarray:
    """Per-period gas cap under the hub's offer rule.

    A sale priced below the conversion cost ``gas_price / eta_chp`` is never
    backed by gas, so the cap is zero in those periods and ``gas_max``
    elsewhere.
    """
    sell_price = np.asarray(sell_price, float)
    gas_price = np.broadcast_to(np.asarray(gas_price, float), sell_price.shape)
    return np.where(hub.eta_chp * sell_price >= gas_price, hub.gas_max, 0.0)


def settle_hub(hub: EnergyHub, sell_qty, buy_qty, gas_price, sell_price, buy_price) -> HubDecision | None:
    """Cheapest physical schedule delivering fixed cleared trades.

    Gas is capped by :func:`gas_limit`.  Returns ``None`` when the battery
    and gas limits cannot deliver the trades.
    """
    from .qp import QpInfeasible

    sell_qty = np.asarray(sell_qty, float)
    buy_qty = np.asarray(buy_qty, float)
    T = sell_qty.size
    qb = QpBuilder()
    gas_price = np.broadcast_to(np.asarray(gas_price, float), (T,))
    sell_price = np.broadcast_to(np.asarray(sell_price, float), (T,))
    idx = _physical_block(qb, hub, T, (sell_qty, sell_qty), (buy_qty, buy_qty),
                          gas_limit(hub, gas_price, sell_price))
    qb.add_linear(idx["gas"], gas_price)
    # small charge/discharge penalty picks one schedule among equal-cost ones
    qb.add_linear(idx["ch"], 1e-6)
    qb.add_linear(idx["dis"], 1e-6)
    try:
        s = solve_qp(qb.build(), 1e-9)
    except QpInfeasible:
        return None
    x = s.x
    sell_price = np.asarray(sell_price, float)
    buy_price = np.asarray(buy_price, float)
    gas = _clean(x[idx["gas"]])
    ch, dis = _clean(x[idx["ch"]]), _clean(x[idx["dis"]])
    profit = float(sell_price @ sell_qty - buy_price @ buy_qty - gas_price @ gas)
    return HubDecision(sell_price.copy(), buy_price.copy(), sell_qty.copy(), buy_qty.copy(), gas, ch, dis,
                       soc_trajectory(hub.battery, ch, dis), profit)


def deliverability_block(hub: EnergyHub, sell_cols: np.ndarray, buy_cols: np.ndarray, n_base: int,
                         gas_max=None):
    """Rows keeping cleared hub trades within what the hub can physically deliver.

    ``sell_cols`` / ``buy_cols`` (T, k) index the variables whose per-period
    sums are the hub's sales to and purchases from the region.  Appends gas,
    charge, discharge and state-of-charge variables after ``n_base`` columns.

    Returns ``(A, b, lower, upper)`` where ``A`` spans ``n_base`` plus the
    new columns and the bounds cover the new columns only.  ``gas_max``
    optionally caps gas per period (see :func:`gas_limit`).
    """
    sell_cols = np.atleast_2d(sell_cols)
    buy_cols = np.atleast_2d(buy_cols)
    T = sell_cols.shape[0]
    bat = hub.battery
    gas = n_base + np.arange(T)
    ch, dis = gas + T, gas + 2 * T
    soc = n_base + 3 * T + np.arange(T + 1)
    rows, cols, vals = [], [], []

    def put(r, c, v):
        rows.extend(np.broadcast_to(r, np.shape(c)).ravel())
        cols.extend(np.ravel(c))
        vals.extend(np.broadcast_to(v, np.shape(c)).ravel())

    t = np.arange(T)
    # buy + eta gas + dis - ch - sell = 0
    put(t[:, None], buy_cols, 1.0)
    put(t[:, None], sell_cols, -1.0)
    put(t, gas, hub.eta_chp)
    put(t, dis, 1.0)
    put(t, ch, -1.0)
    # E[t+1] - E[t] - eta_c ch + dis / eta_d = 0
    put(T + t, soc[1:], 1.0)
    put(T + t, soc[:-1], -1.0)
    put(T + t, ch, -bat.eta_charge)
    put(T + t, dis, 1.0 / bat.eta_discharge)
    n = n_base + 4 * T + 1
    A = sp.csr_matrix((vals, (rows, cols)), shape=(2 * T, n))
    lo = np.concatenate([np.zeros(3 * T), np.full(T + 1, bat.e_min)])
    gas_hi = np.broadcast_to(hub.gas_max if gas_max is None else np.asarray(gas_max, float), (T,))
    hi = np.concatenate([gas_hi, np.full(T, bat.charge_max), np.full(T, bat.discharge_max),
                         np.full(T + 1, bat.e_max)])
    lo[3 * T] = hi[3 * T] = lo[-1] = hi[-1] = bat.e_0
    return A, np.zeros(2 * T), lo, hi
