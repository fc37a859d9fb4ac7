"""Scenario data model: network, nodal agents, energy hub and price signals.

Scenarios are immutable after loading.  Per-period quantities are stored as
tuples of length ``horizon`` so that two scenarios compare equal field by
field.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

SUPPLIER = "supplier"
CONSUMER = "consumer"

DEFAULT_ANGLE_BOUND = 0.5
DEFAULT_HORIZON = 24


class ScenarioError(Exception):
    """Base class for scenario input errors."""


class ParseError(ScenarioError):
    """The scenario file is not well-formed."""


class SchemaError(ScenarioError):
    """A required field is missing or has the wrong shape."""


@dataclass(frozen=True)
class Line:
    from_node: int
    to_node: int
    susceptance: float  # MW/rad
    flow_min: float
    flow_max: float

    @property
    def reactance(self) -> float:
        return 1.0 / self.susceptance


@dataclass(frozen=True)
class Network:
    nodes: tuple[int, ...]
    lines: tuple[Line, ...]
    angle_min: tuple[float, ...]
    angle_max: tuple[float, ...]
    reference_node: int

    def index(self, node: int) -> int:
        return self.nodes.index(node)

    def incident(self, node: int) -> list[tuple[int, int]]:
        """(line index, +1 if ``node`` is the from-end else -1) pairs."""
        out = []
        for k, ln in enumerate(self.lines):
            if ln.from_node == node:
                out.append((k, 1))
            elif ln.to_node == node:
                out.append((k, -1))
        return out

    def neighbour(self, line: int, node: int) -> int:
        ln = self.lines[line]
        return ln.to_node if ln.from_node == node else ln.from_node


@dataclass(frozen=True)
class NodalAgent:
    """Private data of one nodal agent.

    Suppliers carry ``cost = (a2, a1)`` with c(P) = a2 P^2 + a1 P, consumers
    carry ``value = (b1, b2)`` with v(P) = b1 P - b2 P^2.  Quantity bounds are
    per period.
    """

    node: int
    kind: str
    qty_min: tuple[float, ...]
    qty_max: tuple[float, ...]
    cost: tuple[float, float] = (0.0, 0.0)
    value: tuple[float, float] = (0.0, 0.0)
    upstream_buy_max: float = 0.0
    upstream_sell_max: float = 0.0
    hub_buy_max: float = 0.0
    hub_sell_max: float = 0.0
    label: str = ""

    @property
    def is_supplier(self) -> bool:
        return self.kind == SUPPLIER

    def cost_of(self, p):
        a2, a1 = self.cost
        return a2 * np.square(p) + a1 * np.asarray(p)

    def value_of(self, p):
        b1, b2 = self.value
        return b1 * np.asarray(p) - b2 * np.square(p)


@dataclass(frozen=True)
class Battery:
    e_min: float
    e_max: float
    e_0: float
    eta_charge: float
    eta_discharge: float
    charge_max: float
    discharge_max: float


@dataclass(frozen=True)
class EnergyHub:
    attach_node: int
    eta_chp: float
    battery: Battery
    sell_price_min: float  # price at which the hub sells to the region
    sell_price_max: float
    buy_price_min: float  # price at which the hub buys from the region
    buy_price_max: float
    sell_qty_min: float
    sell_qty_max: float
    buy_qty_min: float
    buy_qty_max: float
    gas_max: float


@dataclass(frozen=True)
class PriceSignals:
    """Exogenous prices; upstream series keyed by node id."""

    gas_price: tuple[float, ...]
    upstream_buy: dict[int, tuple[float, ...]] = field(default_factory=dict)
    upstream_sell: dict[int, tuple[float, ...]] = field(default_factory=dict)

    def buy_price(self, node: int, horizon: int) -> np.ndarray:
        return np.asarray(self.upstream_buy.get(node, (0.0,) * horizon), dtype=float)

    def sell_price(self, node: int, horizon: int) -> np.ndarray:
        return np.asarray(self.upstream_sell.get(node, (0.0,) * horizon), dtype=float)


@dataclass(frozen=True)
class Scenario:
    network: Network
    agents: tuple[NodalAgent, ...]
    hub: EnergyHub
    signals: PriceSignals
    horizon: int
    name: str = ""

    def agent(self, node: int) -> NodalAgent:
        for a in self.agents:
            if a.node == node:
                return a
        raise KeyError(node)

    def label(self, node: int) -> str:
        return self.agent(node).label


# ---------------------------------------------------------------------------
# loading


def _require(d: dict, key: str, where: str) -> Any:
    if not isinstance(d, dict):
        raise SchemaError(f"{where}: expected a mapping, got {type(d).__name__}")
    if key not in d or d[key] is None:
        raise SchemaError(f"{where}: missing required field '{key}'")
    return d[key]


def _number(v: Any, where: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise SchemaError(f"{where}: expected a number, got {v!r}")
    return float(v)


def _series(v: Any, horizon: int, where: str) -> tuple[float, ...]:
    """Scalar broadcast to the horizon, or a list of exactly ``horizon`` numbers."""
    if isinstance(v, (list, tuple)):
        if len(v) != horizon:
            raise SchemaError(f"{where}: series has {len(v)} entries, horizon is {horizon}")
        return tuple(_number(x, f"{where}[{i}]") for i, x in enumerate(v))
    return (_number(v, where),) * horizon


def _pair(v: Any, where: str) -> tuple[float, float]:
    if not isinstance(v, (list, tuple)) or len(v) != 2:
        raise SchemaError(f"{where}: expected [min, max]")
    return _number(v[0], where), _number(v[1], where)


def _upper(v: Any, where: str) -> float:
    """Direction bound given either as a max or as [0, max]."""
    if isinstance(v, (list, tuple)):
        lo, hi = _pair(v, where)
        if lo != 0.0:
            raise SchemaError(f"{where}: trade lower bound must be 0")
        return hi
    return _number(v, where)


def scenario_from_dict(doc: dict, name: str = "") -> Scenario:
    """Build a :class:`Scenario` from the parsed key-value tree."""
    if not isinstance(doc, dict):
        raise SchemaError("top level: expected a mapping")
    horizon = int(doc.get("horizon", DEFAULT_HORIZON))
    if horizon < 1:
        raise SchemaError("horizon: must be >= 1")

    net = _require(doc, "network", "top level")
    raw_nodes = _require(net, "nodes", "network")
    nodes, labels, amin, amax = [], {}, [], []
    default_lo, default_hi = -DEFAULT_ANGLE_BOUND, DEFAULT_ANGLE_BOUND
    if "angle_bounds" in net:
        default_lo, default_hi = _pair(net["angle_bounds"], "network.angle_bounds")
    for i, nd in enumerate(raw_nodes):
        where = f"network.nodes[{i}]"
        if isinstance(nd, int):
            nd = {"id": nd}
        nid = int(_require(nd, "id", where))
        nodes.append(nid)
        if "label" in nd:
            labels[nid] = str(nd["label"])
        amin.append(_number(nd.get("angle_min", default_lo), where))
        amax.append(_number(nd.get("angle_max", default_hi), where))

    lines = []
    for i, ln in enumerate(_require(net, "lines", "network") or []):
        where = f"network.lines[{i}]"
        a = int(_require(ln, "from", where))
        b = int(_require(ln, "to", where))
        where = f"network.lines[{i}] ({a}-{b})"
        lines.append(
            Line(
                from_node=a,
                to_node=b,
                susceptance=_number(_require(ln, "susceptance", where), where),
                flow_min=_number(_require(ln, "flow_min", where), where),
                flow_max=_number(_require(ln, "flow_max", where), where),
            )
        )
    ref = int(net.get("reference_node", nodes[0] if nodes else 0))
    network = Network(tuple(nodes), tuple(lines), tuple(amin), tuple(amax), ref)

    agents = []
    for i, ag in enumerate(_require(doc, "agents", "top level")):
        where = f"agents[{i}]"
        nid = int(_require(ag, "node", where))
        kind = str(_require(ag, "kind", where)).lower()
        where = f"agents[{i}] (node {nid})"
        if kind not in (SUPPLIER, CONSUMER):
            raise SchemaError(f"{where}: kind must be 'supplier' or 'consumer'")
        if kind == SUPPLIER:
            c = _require(ag, "cost", where)
            coeffs = dict(cost=(_number(_require(c, "a2", where), where), _number(_require(c, "a1", where), where)))
            box = _require(ag, "generation", where)
        else:
            v = _require(ag, "value", where)
            coeffs = dict(value=(_number(_require(v, "b1", where), where), _number(_require(v, "b2", where), where)))
            box = _require(ag, "demand", where)
        if not isinstance(box, dict):
            box = dict(zip(("min", "max"), _pair(box, where)))
        qmin = _series(box.get("min", 0.0), horizon, f"{where}.min")
        qmax = _series(_require(box, "max", where), horizon, f"{where}.max")
        up = ag.get("upstream") or {}
        hb = ag.get("hub") or {}
        label = labels.get(nid) or ag.get("label") or ("S" if kind == SUPPLIER else "C") + str(nid)
        agents.append(
            NodalAgent(
                node=nid,
                kind=kind,
                qty_min=qmin,
                qty_max=qmax,
                upstream_buy_max=_upper(up.get("buy", 0.0), f"{where}.upstream.buy"),
                upstream_sell_max=_upper(up.get("sell", 0.0), f"{where}.upstream.sell"),
                hub_buy_max=_upper(hb.get("buy", 0.0), f"{where}.hub.buy"),
                hub_sell_max=_upper(hb.get("sell", 0.0), f"{where}.hub.sell"),
                label=str(label),
                **coeffs,
            )
        )

    h = _require(doc, "hub", "top level")
    bat = _require(h, "battery", "hub")
    hub = EnergyHub(
        attach_node=int(_require(h, "attach_node", "hub")),
        eta_chp=_number(_require(h, "eta_chp", "hub"), "hub.eta_chp"),
        battery=Battery(
            e_min=_number(_require(bat, "E_min", "hub.battery"), "hub.battery.E_min"),
            e_max=_number(_require(bat, "E_max", "hub.battery"), "hub.battery.E_max"),
            e_0=_number(_require(bat, "E_0", "hub.battery"), "hub.battery.E_0"),
            eta_charge=_number(_require(bat, "eta_charge", "hub.battery"), "hub.battery.eta_charge"),
            eta_discharge=_number(_require(bat, "eta_discharge", "hub.battery"), "hub.battery.eta_discharge"),
            charge_max=_number(_require(bat, "P_ch_max", "hub.battery"), "hub.battery.P_ch_max"),
            discharge_max=_number(_require(bat, "P_dis_max", "hub.battery"), "hub.battery.P_dis_max"),
        ),
        sell_price_min=_pair(_require(h, "sell_price", "hub"), "hub.sell_price")[0],
        sell_price_max=_pair(h["sell_price"], "hub.sell_price")[1],
        buy_price_min=_pair(_require(h, "buy_price", "hub"), "hub.buy_price")[0],
        buy_price_max=_pair(h["buy_price"], "hub.buy_price")[1],
        sell_qty_min=_pair(_require(h, "sell_qty", "hub"), "hub.sell_qty")[0],
        sell_qty_max=_pair(h["sell_qty"], "hub.sell_qty")[1],
        buy_qty_min=_pair(_require(h, "buy_qty", "hub"), "hub.buy_qty")[0],
        buy_qty_max=_pair(h["buy_qty"], "hub.buy_qty")[1],
        gas_max=_number(h.get("gas_max", 1e3), "hub.gas_max"),
    )

    sig = _require(doc, "signals", "top level")
    ub, us = {}, {}
    for i, up in enumerate(sig.get("upstream") or []):
        where = f"signals.upstream[{i}]"
        nid = int(_require(up, "node", where))
        ub[nid] = _series(up.get("buy", 0.0), horizon, f"{where}.buy")
        us[nid] = _series(up.get("sell", 0.0), horizon, f"{where}.sell")
    signals = PriceSignals(
        gas_price=_series(_require(sig, "gas_price", "signals"), horizon, "signals.gas_price"),
        upstream_buy=ub,
        upstream_sell=us,
    )
    return Scenario(network, tuple(agents), hub, signals, horizon, name=str(doc.get("name", name)))


def load_scenario(path) -> Scenario:
    """Read a scenario file (YAML key-value tree).

    Raises
    ------
    ParseError
        The file is not valid YAML; the message carries line and column.
    SchemaError
        A required field is missing or malformed; the message names it.
    FileNotFoundError
        ``path`` does not exist.
    """
    path = Path(path)
    text = path.read_text()
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        problem = getattr(exc, "problem", None) or str(exc)
        raise ParseError(f"{path}{where}: {problem}") from exc
    return scenario_from_dict(doc, name=path.stem)


def _compact(series: tuple[float, ...]):
    return series[0] if len(set(series)) == 1 else list(series)


def scenario_to_dict(s: Scenario) -> dict:
    """Inverse of :func:`scenario_from_dict` (up to scalar/series compaction)."""
    net = s.network
    doc = {
        "name": s.name,
        "horizon": s.horizon,
        "network": {
            "reference_node": net.reference_node,
            "nodes": [
                {"id": n, "label": s.label(n), "angle_min": net.angle_min[i], "angle_max": net.angle_max[i]}
                for i, n in enumerate(net.nodes)
            ],
            "lines": [
                {"from": ln.from_node, "to": ln.to_node, "susceptance": ln.susceptance,
                 "flow_min": ln.flow_min, "flow_max": ln.flow_max}
                for ln in net.lines
            ],
        },
        "agents": [],
    }
    for a in s.agents:
        d: dict[str, Any] = {"node": a.node, "kind": a.kind}
        box = {"min": _compact(a.qty_min), "max": _compact(a.qty_max)}
        if a.is_supplier:
            d["cost"] = {"a2": a.cost[0], "a1": a.cost[1]}
            d["generation"] = box
        else:
            d["value"] = {"b1": a.value[0], "b2": a.value[1]}
            d["demand"] = box
        d["upstream"] = {"buy": a.upstream_buy_max, "sell": a.upstream_sell_max}
        d["hub"] = {"buy": a.hub_buy_max, "sell": a.hub_sell_max}
        doc["agents"].append(d)
    h, b = s.hub, s.hub.battery
    doc["hub"] = {
        "attach_node": h.attach_node,
        "eta_chp": h.eta_chp,
        "gas_max": h.gas_max,
        "battery": {"E_min": b.e_min, "E_max": b.e_max, "E_0": b.e_0, "eta_charge": b.eta_charge,
                    "eta_discharge": b.eta_discharge, "P_ch_max": b.charge_max, "P_dis_max": b.discharge_max},
        "sell_price": [h.sell_price_min, h.sell_price_max],
        "buy_price": [h.buy_price_min, h.buy_price_max],
        "sell_qty": [h.sell_qty_min, h.sell_qty_max],
        "buy_qty": [h.buy_qty_min, h.buy_qty_max],
    }
    up_nodes = sorted(set(s.signals.upstream_buy) | set(s.signals.upstream_sell))
    doc["signals"] = {
        "gas_price": _compact(s.signals.gas_price),
        "upstream": [
            {"node": n,
             "buy": _compact(s.signals.upstream_buy.get(n, (0.0,) * s.horizon)),
             "sell": _compact(s.signals.upstream_sell.get(n, (0.0,) * s.horizon))}
            for n in up_nodes
        ],
    }
    return doc


def dump_scenario(s: Scenario, path) -> None:
    Path(path).write_text(yaml.safe_dump(scenario_to_dict(s), sort_keys=False))


# ---------------------------------------------------------------------------
# validation


def _connected(nodes, lines) -> bool:
    if not nodes:
        return True
    adj = {n: set() for n in nodes}
    for ln in lines:
        if ln.from_node in adj and ln.to_node in adj:
            adj[ln.from_node].add(ln.to_node)
            adj[ln.to_node].add(ln.from_node)
    seen = {nodes[0]}
    todo = deque([nodes[0]])
    while todo:
        for m in adj[todo.popleft()] - seen:
            seen.add(m)
            todo.append(m)
    return len(seen) == len(nodes)


def validate_scenario(s: Scenario) -> list[str]:
    """Check structural assumptions; returns a list of violations (empty if valid)."""
    out: list[str] = []
    net, T = s.network, s.horizon
    nodes = set(net.nodes)
    if len(nodes) != len(net.nodes):
        out.append("duplicate node ids")
    if net.reference_node not in nodes:
        out.append(f"reference node {net.reference_node} is not a network node")
    for i, n in enumerate(net.nodes):
        if not net.angle_min[i] <= 0.0 <= net.angle_max[i]:
            out.append(f"angle bounds at node {n} must bracket 0")
    pairs = set()
    for ln in net.lines:
        tag = f"line {ln.from_node}-{ln.to_node}"
        if ln.from_node not in nodes or ln.to_node not in nodes:
            out.append(f"{tag}: unknown endpoint")
        if ln.from_node == ln.to_node:
            out.append(f"{tag}: self loop")
        if not ln.susceptance > 0:
            out.append(f"{tag}: susceptance must be positive")
        if not ln.flow_min <= 0.0 <= ln.flow_max:
            out.append(f"{tag}: flow limits must satisfy flow_min <= 0 <= flow_max")
        key = frozenset((ln.from_node, ln.to_node))
        if key in pairs:
            out.append(f"{tag}: parallel line between the same node pair")
        pairs.add(key)
    if not _connected(list(net.nodes), net.lines):
        out.append("network is not connected")

    seen = [a.node for a in s.agents]
    for n in net.nodes:
        if seen.count(n) != 1:
            out.append(f"node {n} must have exactly one agent (found {seen.count(n)})")
    for n in set(seen) - nodes:
        out.append(f"agent at unknown node {n}")

    for a in s.agents:
        tag = f"node {a.node}"
        if len(a.qty_min) != T or len(a.qty_max) != T:
            out.append(f"{tag}: quantity bounds must have {T} periods")
        if a.is_supplier and a.cost[0] < 0:
            out.append(f"nonconvex cost at node {a.node} (a2 = {a.cost[0]})")
        if not a.is_supplier and a.value[1] < 0:
            out.append(f"nonconcave value at node {a.node} (b2 = {a.value[1]})")
        if any(lo < 0 or lo > hi for lo, hi in zip(a.qty_min, a.qty_max)):
            out.append(f"{tag}: quantity bounds must satisfy 0 <= min <= max")
        for nm in ("upstream_buy_max", "upstream_sell_max", "hub_buy_max", "hub_sell_max"):
            if getattr(a, nm) < 0:
                out.append(f"{tag}: {nm} must be >= 0")
        if a.node != s.hub.attach_node and (a.hub_buy_max or a.hub_sell_max):
            out.append(f"{tag}: hub trading allowed only at the hub attachment node")
        if a.is_supplier and a.hub_buy_max:
            out.append(f"{tag}: suppliers may only sell to the hub")
        if a.is_supplier and a.upstream_buy_max:
            out.append(f"{tag}: suppliers may only sell upstream")
        if (a.upstream_buy_max or a.upstream_sell_max) and a.node not in s.signals.upstream_buy \
                and a.node not in s.signals.upstream_sell:
            out.append(f"{tag}: upstream access without price signals")

    h, b = s.hub, s.hub.battery
    if h.attach_node not in nodes:
        out.append(f"hub attach node {h.attach_node} is not a network node")
    if not b.e_min <= b.e_0 <= b.e_max:
        out.append("battery: need E_min <= E_0 <= E_max")
    for nm, v in (("eta_charge", b.eta_charge), ("eta_discharge", b.eta_discharge), ("eta_chp", h.eta_chp)):
        if not 0 < v <= 1:
            out.append(f"hub: {nm} must lie in (0, 1]")
    if not h.sell_price_min < h.sell_price_max:
        out.append("hub: sell price_min must be < price_max")
    if not h.buy_price_min < h.buy_price_max:
        out.append("hub: buy price_min must be < price_max")
    for nm, lo, hi in (("sell_qty", h.sell_qty_min, h.sell_qty_max), ("buy_qty", h.buy_qty_min, h.buy_qty_max),
                       ("charge", 0.0, b.charge_max), ("discharge", 0.0, b.discharge_max), ("gas", 0.0, h.gas_max)):
        if not 0 <= lo <= hi:
            out.append(f"hub: {nm} bounds must satisfy 0 <= min <= max")

    sig = s.signals
    if len(sig.gas_price) != T or any(p < 0 for p in sig.gas_price):
        out.append("signals: gas price must be non-negative with one value per period")
    for tag, series in (("buy", sig.upstream_buy), ("sell", sig.upstream_sell)):
        for n, ps in series.items():
            if len(ps) != T or any(p < 0 for p in ps):
                out.append(f"signals: upstream {tag} prices at node {n} must be non-negative, {T} periods")

    if not out:
        out.extend(_strict_feasibility(s))
    return out


def _strict_feasibility(s: Scenario) -> list[str]:
    """Probe for a strictly feasible network dispatch.

    Every box is shrunk toward its midpoint by a small margin and a bounded
    least-squares solve is asked to satisfy nodal balance and the flow law.
    """
    from scipy.optimize import lsq_linear

    from .network import NetworkLayout

    lay = NetworkLayout(s)
    out = []
    lo, hi = lay.bounds(0)
    mid = 0.5 * (lo + hi)
    if not np.all((lo <= mid) & (mid <= hi)):
        out.append("all-midpoint candidate violates box constraints")
        return out
    A, b = lay.network_equalities()
    for t in range(s.horizon):
        lo, hi = lay.bounds(t)
        width = hi - lo
        margin = np.where(width > 0, 1e-3 * width, 0.0)
        lo_s, hi_s = lo + margin, hi - margin
        fixed = hi_s - lo_s <= 0
        hi_s = np.where(fixed, lo_s + 1e-12, hi_s)
        res = lsq_linear(A.toarray(), b, bounds=(lo_s, hi_s), method="trf", tol=1e-12, lsq_solver="exact")
        if not math.isfinite(res.cost) or np.max(np.abs(A @ res.x - b), initial=0.0) > 1e-6:
            out.append(f"no strictly feasible network dispatch in period {t}")
            break
    return out
