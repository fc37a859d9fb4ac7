"""Binary-expansion price encoding and a mixed-binary convex QP solver.

A price restricted to ``lambda_min + delta * k`` with ``k`` in
``0 .. 2**gamma - 1`` is written with bits ``z_1 .. z_gamma``::

    lambda = lambda_min + delta * sum_tau 2**(tau-1) z_tau,
    delta  = (lambda_max - lambda_min) / 2**gamma

and each product ``qty * z_tau`` is replaced by an auxiliary ``w_tau`` held
exact by four linear inequalities (``qty_max`` is an upper bound on ``qty``)::

    0 <= qty - w_tau <= qty_max (1 - z_tau)
    0 <= w_tau       <= qty_max z_tau
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .qp import QpBuilder, QpInfeasible, QpProblem, Status, solve_qp, solve_qp_batch


class InvalidBounds(ValueError):
    pass


class TooManyBinaries(ValueError):
    pass


class MiqpInfeasible(QpInfeasible):
    pass


MAX_ORACLE_BINARIES = 20


@dataclass(frozen=True)
class LinkingRow:
    """``lo <= sum coef * var <= hi`` over symbolic variables.

    Variables are ``("qty", t)``, ``("w", t, tau)`` or ``("z", t, tau)`` with
    ``tau`` counted from 1.
    """

    label: str
    terms: tuple[tuple[tuple, float], ...]
    lo: float
    hi: float


@dataclass(frozen=True)
class BinaryExpansion:
    lambda_min: float
    lambda_max: float
    gamma: int
    qty_max: float
    periods: int

    @property
    def delta(self) -> float:
        return (self.lambda_max - self.lambda_min) / 2**self.gamma

    @property
    def weights(self) -> np.ndarray:
        return 2.0 ** np.arange(self.gamma)

    def levels(self) -> np.ndarray:
        return self.lambda_min + self.delta * np.arange(2**self.gamma)

    def price(self, z) -> np.ndarray:
        """Recover prices from bits ``z`` of shape (..., gamma)."""
        k = np.rint(np.asarray(z, float)) @ self.weights
        return self.lambda_min + self.delta * k

    def bits(self, price: float) -> np.ndarray:
        k = int(round((price - self.lambda_min) / self.delta))
        if not 0 <= k < 2**self.gamma:
            raise InvalidBounds(f"price {price} is off the grid")
        return np.array([(k >> i) & 1 for i in range(self.gamma)], dtype=float)

    def attach(self, qb: QpBuilder, qty: np.ndarray, name: str = "") -> tuple[np.ndarray, np.ndarray]:
        """Add auxiliaries, binaries and linking rows for ``qty`` (one index per period).

        Returns ``(w, z)`` index arrays of shape (periods, gamma).  Rows whose
        only term is a single variable become bounds instead of slack rows.
        """
        T, G, M = self.periods, self.gamma, self.qty_max
        w = qb.add_vars(f"w{name}", (T, G), 0.0, M)
        z = qb.add_vars(f"z{name}", (T, G), 0.0, 1.0)
        q = np.asarray(qty).reshape(T, 1)
        # qty - w >= 0 and qty - w + M z <= M
        qb.add_inequalities([(np.broadcast_to(q, (T, G)), 1.0), (w, -1.0)], np.zeros((T, G)), np.inf, f"s{name}a")
        qb.add_inequalities([(np.broadcast_to(q, (T, G)), 1.0), (w, -1.0), (z, M)], np.full((T, G), -np.inf),
                            M, f"s{name}b")
        # w - M z <= 0
        qb.add_inequalities([(w, 1.0), (z, -M)], np.full((T, G), -np.inf), 0.0, f"s{name}c")
        return w, z


def build_binary_expansion(lambda_min: float, lambda_max: float, gamma: int, qty_max: float,
                           periods: int) -> tuple[BinaryExpansion, list[LinkingRow]]:
    """Expansion of one trade direction plus its symbolic linking inequalities."""
    if not lambda_min < lambda_max:
        raise InvalidBounds("need lambda_min < lambda_max")
    if gamma < 1:
        raise InvalidBounds("need gamma >= 1")
    if not qty_max > 0:
        raise InvalidBounds("need qty_max > 0")
    exp = BinaryExpansion(float(lambda_min), float(lambda_max), int(gamma), float(qty_max), int(periods))
    M = exp.qty_max
    rows = []
    for t in range(periods):
        for tau in range(1, gamma + 1):
            q, w, z = ("qty", t), ("w", t, tau), ("z", t, tau)
            rows += [
                LinkingRow(f"qty-w>=0[{t},{tau}]", ((q, 1.0), (w, -1.0)), 0.0, np.inf),
                LinkingRow(f"qty-w<=M(1-z)[{t},{tau}]", ((q, 1.0), (w, -1.0), (z, M)), -np.inf, M),
                LinkingRow(f"w>=0[{t},{tau}]", ((w, 1.0),), 0.0, np.inf),
                LinkingRow(f"w<=Mz[{t},{tau}]", ((w, 1.0), (z, -M)), -np.inf, 0.0),
            ]
    return exp, rows


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MiqpProblem:
    """A convex QP whose ``binary`` variables must end at 0 or 1.

    ``relaxation`` carries bounds ``[0, 1]`` (or tighter) on the binaries.
    """

    relaxation: QpProblem
    binary: np.ndarray

    @property
    def num_binaries(self) -> int:
        return int(np.asarray(self.binary).size)


@dataclass
class MiqpSolution:
    x: np.ndarray
    z: np.ndarray
    objective: float
    status: Status
    nodes: int
    bound: float = -np.inf


def _fixed_solve(p: MiqpProblem, z: np.ndarray, tol: float):
    lo, hi = p.relaxation.lower.copy(), p.relaxation.upper.copy()
    lo[p.binary] = hi[p.binary] = z
    return solve_qp(p.relaxation.with_bounds(lo, hi), tol)


def solve_miqp(p: MiqpProblem, tol: float = 1e-6, node_limit: int = 5000, int_tol: float = 1e-6,
               qp_tol: float = 1e-9, on_node: Callable | None = None, candidates=()) -> MiqpSolution:
    """Depth-first branch and bound.

    Branches on the most fractional binary (lowest index on ties) and
    explores the ``z = 1`` child first.  Nodes whose relaxation bound is not
    better than the incumbent by more than ``max(tol, 1e-9 |incumbent|)``
    are pruned.  At the root the rounded relaxation and every assignment in
    ``candidates`` are evaluated to seed the incumbent.  Integral leaves are
    re-solved with the binaries fixed so that linking rows hold exactly.

    ``on_node(bound, lower, upper)`` is called for every solved node.

    Raises
    ------
    MiqpInfeasible
        No binary assignment admits a feasible point.
    """
    bins = np.asarray(p.binary, dtype=int)
    lo0 = p.relaxation.lower.copy()
    hi0 = p.relaxation.upper.copy()
    lo0[bins] = np.maximum(lo0[bins], 0.0)
    hi0[bins] = np.minimum(hi0[bins], 1.0)
    best_x, best_z, best_obj = None, None, np.inf
    root_bound = -np.inf
    stack = [(lo0, hi0)]
    nodes = 0
    status = Status.OPTIMAL

    def offer(z):
        nonlocal best_x, best_z, best_obj
        try:
            s = _fixed_solve(p, z, qp_tol)
        except QpInfeasible:
            return
        if s.objective < best_obj - 1e-12 or (
            abs(s.objective - best_obj) <= 1e-12 and best_z is not None and tuple(z) < tuple(best_z)
        ):
            best_x, best_z, best_obj = s.x, z.copy(), s.objective

    def gap():
        return max(tol, 1e-9 * abs(best_obj)) if np.isfinite(best_obj) else tol

    while stack:
        if nodes >= node_limit:
            status = Status.ITER_LIMIT
            break
        lo, hi = stack.pop()
        nodes += 1
        try:
            s = solve_qp(p.relaxation.with_bounds(lo, hi), qp_tol)
        except QpInfeasible:
            continue
        if on_node is not None:
            on_node(s.objective, lo[bins].copy(), hi[bins].copy())
        if nodes == 1:
            root_bound = s.objective
        if s.objective >= best_obj - gap():
            continue
        zb = s.x[bins]
        frac = np.abs(zb - np.rint(zb))
        if np.max(frac, initial=0.0) <= int_tol:
            offer(np.rint(zb))
            continue
        if nodes == 1:
            offer(np.floor(zb + 0.5))
            for c in candidates:
                offer(np.asarray(c, float).ravel())
            if s.objective >= best_obj - gap():
                continue
        k = int(np.argmax(frac))
        j = bins[k]
        lo_down, hi_down = lo.copy(), hi.copy()
        hi_down[j] = 0.0
        lo_up, hi_up = lo.copy(), hi.copy()
        lo_up[j] = 1.0
        stack.append((lo_down, hi_down))
        stack.append((lo_up, hi_up))

    if best_x is None:
        if status == Status.ITER_LIMIT:
            raise MiqpInfeasible("node limit reached without an integral solution")
        raise MiqpInfeasible("no feasible binary assignment")
    return MiqpSolution(best_x, best_z, best_obj, status, nodes, root_bound)


def enumerate_miqp_oracle(p: MiqpProblem, tol: float = 1e-9) -> MiqpSolution:
    """Solve the fixed-binary QP for every assignment and keep the best.

    Assignments are visited in ``itertools.product`` order and ties keep the
    first one.  With a diagonal ``Q`` all assignments are solved together by
    :func:`solve_qp_batch`; anything it leaves unsolved (and every assignment
    otherwise) goes through :func:`solve_qp`.  The winner is re-solved on its
    own for the returned point.  Test oracle only.
    """
    k = p.num_binaries
    if k > MAX_ORACLE_BINARIES:
        raise TooManyBinaries(f"{k} binaries exceed the oracle limit of {MAX_ORACLE_BINARIES}")
    Z = np.array(list(itertools.product((0.0, 1.0), repeat=k))).reshape(2**k, k)
    try:
        obj = solve_qp_batch(p.relaxation, p.binary, Z, tol)
    except ValueError:
        obj = np.full(len(Z), np.nan)
    for i in np.flatnonzero(np.isnan(obj)):
        try:
            obj[i] = _fixed_solve(p, Z[i], tol).objective
        except QpInfeasible:
            obj[i] = np.inf
    if not np.any(np.isfinite(obj)):
        raise MiqpInfeasible("no feasible binary assignment")
    i = int(np.flatnonzero(obj <= np.min(obj) + 1e-12)[0])
    s = _fixed_solve(p, Z[i], tol)
    return MiqpSolution(s.x, Z[i], s.objective, s.status, len(Z))
