"""Index bookkeeping for the per-period network variable vector.

One period of the network (RSO or centralized) problem has the variables::

    theta[N] | flow[L] | qty[N] | up_buy[N] | up_sell[N] | hub_buy[N] | hub_sell[N]

``qty`` is generation at supplier nodes and demand at consumer nodes.  The
horizon is stacked period-major.  ``hub_buy`` is energy a node buys from the
hub, ``hub_sell`` energy it sells to the hub.

Each agent owns a list of *coupling components*: local copies of network
variables (own angle, exports on incident lines, a copy of each neighbour's
angle, its quantity, and its upstream and hub trades).  A component maps to
one network variable with a sign (+1, or -1 for an export on a line whose
from-end is the neighbour).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .model import Scenario

BLOCKS = ("theta", "flow", "qty", "up_buy", "up_sell", "hub_buy", "hub_sell")


@dataclass(frozen=True)
class Component:
    kind: str  # theta | flow | nbr_theta | qty | up_buy | up_sell | hub_buy | hub_sell
    var: int  # index in one period of the network vector
    sign: float
    line: int = -1  # for flow / nbr_theta

    @property
    def key(self) -> str:
        return f"{self.kind}[{self.line}]" if self.line >= 0 else self.kind


class NetworkLayout:
    def __init__(self, scenario: Scenario, hub_caps: np.ndarray | None = None):
        """``hub_caps`` (T, 2) optionally tightens the attach node's
        (hub_buy, hub_sell) upper bounds, e.g. to the hub's current offer."""
        self.s = scenario
        net = scenario.network
        self.N = len(net.nodes)
        self.L = len(net.lines)
        self.T = scenario.horizon
        N, L = self.N, self.L
        self.offset = {}
        pos = 0
        for name in BLOCKS:
            self.offset[name] = pos
            pos += L if name == "flow" else N
        self.nv = pos
        self.hub_caps = hub_caps
        self.components = {n: self._components(n) for n in net.nodes}

    # -- indices ---------------------------------------------------------------
    def var(self, block: str, k: int) -> int:
        return self.offset[block] + k

    def block(self, block: str) -> slice:
        size = self.L if block == "flow" else self.N
        return slice(self.offset[block], self.offset[block] + size)

    def stacked(self, local: np.ndarray | int) -> np.ndarray:
        """Global indices (T, ...) of per-period index ``local``."""
        return np.arange(self.T)[:, None] * self.nv + np.atleast_1d(local)[None, :]

    def _components(self, node: int) -> list[Component]:
        net, s = self.s.network, self.s
        i = net.index(node)
        agent = s.agent(node)
        comps = [Component("theta", self.var("theta", i), 1.0)]
        for line, sign in net.incident(node):
            comps.append(Component("flow", self.var("flow", line), float(sign), line))
        for line, _ in net.incident(node):
            m = net.index(net.neighbour(line, node))
            comps.append(Component("nbr_theta", self.var("theta", m), 1.0, line))
        comps.append(Component("qty", self.var("qty", i), 1.0))
        if agent.upstream_buy_max > 0 and not agent.is_supplier:
            comps.append(Component("up_buy", self.var("up_buy", i), 1.0))
        if agent.upstream_sell_max > 0:
            comps.append(Component("up_sell", self.var("up_sell", i), 1.0))
        if agent.hub_buy_max > 0 and not agent.is_supplier:
            comps.append(Component("hub_buy", self.var("hub_buy", i), 1.0))
        if agent.hub_sell_max > 0:
            comps.append(Component("hub_sell", self.var("hub_sell", i), 1.0))
        return comps

    # -- bounds ----------------------------------------------------------------
    def bounds(self, t: int) -> tuple[np.ndarray, np.ndarray]:
        """Per-period lower/upper bounds of the network vector."""
        s, net = self.s, self.s.network
        lo = np.zeros(self.nv)
        hi = np.zeros(self.nv)
        th = self.block("theta")
        lo[th] = net.angle_min
        hi[th] = net.angle_max
        ref = self.var("theta", net.index(net.reference_node))
        lo[ref] = hi[ref] = 0.0
        fl = self.block("flow")
        lo[fl] = [ln.flow_min for ln in net.lines]
        hi[fl] = [ln.flow_max for ln in net.lines]
        for i, n in enumerate(net.nodes):
            a = s.agent(n)
            lo[self.var("qty", i)] = a.qty_min[t]
            hi[self.var("qty", i)] = a.qty_max[t]
            if not a.is_supplier:
                hi[self.var("up_buy", i)] = a.upstream_buy_max
                hi[self.var("hub_buy", i)] = a.hub_buy_max
            hi[self.var("up_sell", i)] = a.upstream_sell_max
            hi[self.var("hub_sell", i)] = a.hub_sell_max
        if self.hub_caps is not None and s.hub.attach_node in net.nodes:
            j = net.index(s.hub.attach_node)
            for col, block in enumerate(("hub_buy", "hub_sell")):
                v = self.var(block, j)
                hi[v] = min(hi[v], max(self.hub_caps[t, col], 0.0))
        return lo, hi

    def stacked_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        pairs = [self.bounds(t) for t in range(self.T)]
        return np.concatenate([p[0] for p in pairs]), np.concatenate([p[1] for p in pairs])

    def component_bounds(self, node: int, t: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.bounds(t)
        comps = self.components[node]
        clo, chi = np.empty(len(comps)), np.empty(len(comps))
        for k, c in enumerate(comps):
            a, b = lo[c.var] * c.sign, hi[c.var] * c.sign
            clo[k], chi[k] = min(a, b), max(a, b)
        return clo, chi

    # -- constraints -----------------------------------------------------------
    def network_equalities(self) -> tuple[sp.csr_matrix, np.ndarray]:
        """Per-period nodal balance (N rows) and DC flow law (L rows)."""
        s, net = self.s, self.s.network
        rows, cols, vals = [], [], []
        for i, n in enumerate(net.nodes):
            sgn = 1.0 if s.agent(n).is_supplier else -1.0
            entries = [(self.var("qty", i), sgn), (self.var("up_buy", i), 1.0), (self.var("up_sell", i), -1.0),
                       (self.var("hub_buy", i), 1.0), (self.var("hub_sell", i), -1.0)]
            for line, sign in net.incident(n):
                entries.append((self.var("flow", line), -float(sign)))
            for c, v in entries:
                rows.append(i)
                cols.append(c)
                vals.append(v)
        for k, ln in enumerate(net.lines):
            r = self.N + k
            rows += [r, r, r]
            cols += [self.var("flow", k), self.var("theta", net.index(ln.from_node)),
                     self.var("theta", net.index(ln.to_node))]
            vals += [1.0, -ln.susceptance, ln.susceptance]
        A = sp.csr_matrix((vals, (rows, cols)), shape=(self.N + self.L, self.nv))
        return A, np.zeros(self.N + self.L)

    def stacked_equalities(self) -> tuple[sp.csr_matrix, np.ndarray]:
        A, b = self.network_equalities()
        return sp.kron(sp.identity(self.T, format="csr"), A, format="csr"), np.tile(b, self.T)

    # -- views -----------------------------------------------------------------
    def unstack(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x).reshape(self.T, self.nv)

    def project(self, node: int, z: np.ndarray) -> np.ndarray:
        """Map a stacked network vector to ``node``'s components, shape (T, k)."""
        Z = self.unstack(z)
        comps = self.components[node]
        idx = np.array([c.var for c in comps])
        sign = np.array([c.sign for c in comps])
        return Z[:, idx] * sign
