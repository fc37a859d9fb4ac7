"""Convex quadratic programming.

Solves::

    minimize    1/2 x'Qx + q'x + offset
    subject to  A x = b,   l <= x <= u

with a primal-dual interior-point method (Mehrotra predictor-corrector on the
sparse quasi-definite KKT system) followed by an active-set polish step that
re-solves the equality-constrained problem on the identified active set.  The
polish usually drives the KKT residual to round-off; when it cannot (singular
reduced system, wrong active set) the interior-point iterate is returned.

Fixed variables (``l == u``) are eliminated before the solve.  Infinite
bounds are ``+-np.inf`` and are excluded from complementarity.  Ties among
multiple optima are resolved by the interior-point path itself (it converges
toward the analytic centre of the optimal face), which is deterministic.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

log = logging.getLogger(__name__)


class QpError(Exception):
    """Base class for solver errors."""


class QpInfeasible(QpError):
    """The equality system is inconsistent with the bounds."""


class DimensionMismatch(QpError):
    pass


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    ITER_LIMIT = "IterLimit"


@dataclass(frozen=True)
class QpProblem:
    Q: sp.csr_matrix
    q: np.ndarray
    A: sp.csr_matrix
    b: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    names: tuple[str, ...] = ()
    offset: float = 0.0

    @property
    def n(self) -> int:
        return self.q.shape[0]

    @property
    def m(self) -> int:
        return self.b.shape[0]

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ (self.Q @ x) + self.q @ x + self.offset)

    def with_bounds(self, lower: np.ndarray, upper: np.ndarray) -> "QpProblem":
        return QpProblem(self.Q, self.q, self.A, self.b, lower, upper, self.names, self.offset)


def make_qp(Q, q, A=None, b=None, lower=None, upper=None, names=(), offset=0.0) -> QpProblem:
    """Build a :class:`QpProblem` from dense or sparse pieces, filling defaults."""
    q = np.asarray(q, dtype=float).ravel()
    n = q.shape[0]
    Q = sp.csr_matrix(Q if Q is not None else (n, n), dtype=float)
    if A is None:
        A = sp.csr_matrix((0, n))
        b = np.zeros(0)
    A = sp.csr_matrix(A, dtype=float)
    b = np.asarray(b, dtype=float).ravel()
    lower = np.full(n, -np.inf) if lower is None else np.asarray(lower, dtype=float).ravel()
    upper = np.full(n, np.inf) if upper is None else np.asarray(upper, dtype=float).ravel()
    if Q.shape != (n, n) or A.shape[1] != n or A.shape[0] != b.shape[0] or lower.shape != (n,) or upper.shape != (n,):
        raise DimensionMismatch("inconsistent QP dimensions")
    return QpProblem(Q, q, A, b, lower, upper, tuple(names), float(offset))


@dataclass
class QpSolution:
    x: np.ndarray
    eq_duals: np.ndarray
    lower_duals: np.ndarray
    upper_duals: np.ndarray
    status: Status
    objective: float
    iterations: int = 0
    polished: bool = False

    @property
    def bound_duals(self) -> tuple[np.ndarray, np.ndarray]:
        return self.lower_duals, self.upper_duals


# ---------------------------------------------------------------------------


def kkt_residual(p: QpProblem, s: QpSolution) -> float:
    """Max-norm of stationarity, primal feasibility, dual sign and complementarity.

    Stationarity is ``Qx + q - A'y - z_l + z_u = 0``.
    """
    x, y = np.asarray(s.x, float), np.asarray(s.eq_duals, float)
    zl, zu = np.asarray(s.lower_duals, float), np.asarray(s.upper_duals, float)
    if x.shape != (p.n,) or y.shape != (p.m,) or zl.shape != (p.n,) or zu.shape != (p.n,):
        raise DimensionMismatch("solution does not match problem dimensions")
    fl, fu = np.isfinite(p.lower), np.isfinite(p.upper)
    zl = np.where(fl, zl, 0.0)
    zu = np.where(fu, zu, 0.0)
    stat = p.Q @ x + p.q - p.A.T @ y - zl + zu
    parts = [
        np.abs(stat),
        np.abs(p.A @ x - p.b),
        np.maximum(np.where(fl, p.lower - x, 0.0), 0.0),
        np.maximum(np.where(fu, x - p.upper, 0.0), 0.0),
        np.maximum(-zl, 0.0),
        np.maximum(-zu, 0.0),
        np.abs(np.where(fl, (x - np.where(fl, p.lower, 0.0)) * zl, 0.0)),
        np.abs(np.where(fu, (np.where(fu, p.upper, 0.0) - x) * zu, 0.0)),
    ]
    return float(max((np.max(v) for v in parts if v.size), default=0.0))


DENSE_MAX = 150  # KKT systems up to this order are assembled and factored densely


class _Factor:
    """LU of a quasi-definite KKT matrix behind one ``solve`` method.

    Large systems use SuperLU in symmetric mode (minimum degree on A+A',
    diagonal pivots), refined against ``K``; if that breaks down, partial
    pivoting is used instead.
    """

    def __init__(self, K, refine: int = 2):
        self.K = K
        self.refine = refine
        if K.shape[0] <= DENSE_MAX:
            self._lu = la.lu_factor(K.toarray() if sp.issparse(K) else K, check_finite=False)
            self._solve = lambda r: la.lu_solve(self._lu, r, check_finite=False)
            self.refine = 0
            return
        K = sp.csc_matrix(K)
        try:
            self._lu = spla.splu(K, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                                 options=dict(SymmetricMode=True))
        except RuntimeError:
            self._lu = spla.splu(K)
        self._solve = self._lu.solve

    def solve(self, r):
        x = self._solve(r)
        for _ in range(self.refine):
            x = x + self._solve(r - self.K @ x)
        if not np.all(np.isfinite(x)):
            self._lu = spla.splu(sp.csc_matrix(self.K))
            self._solve = self._lu.solve
            x = self._solve(r)
        return x


def _kkt_matrix(H, A, reg_p, reg_d):
    n, m = H.shape[0], A.shape[0]
    if isinstance(H, np.ndarray):
        return np.block([[H + reg_p * np.eye(n), A.T], [A, -reg_d * np.eye(m)]])
    return sp.bmat(
        [[H + reg_p * sp.identity(n), A.T], [A, -reg_d * sp.identity(m)]], format="csc"
    )


def _solve_refined(K_reg, K, rhs, steps=3):
    f = _Factor(K_reg)
    sol = f.solve(rhs)
    for _ in range(steps):
        r = rhs - K @ sol
        if np.max(np.abs(r), initial=0.0) < 1e-14 * (1 + np.max(np.abs(rhs), initial=0.0)):
            break
        sol = sol + f.solve(r)
    return sol


def _ipm(Q, q, A, b, l, u, tol, max_iter):
    """Primal-dual interior point on the reduced problem (no fixed variables)."""
    n, m = q.shape[0], b.shape[0]
    L, U = np.isfinite(l), np.isfinite(u)
    li, ui = np.flatnonzero(L), np.flatnonzero(U)
    ncomp = li.size + ui.size
    dense = n + m <= DENSE_MAX
    if dense:
        # sparse assembly overhead dominates on small systems
        Q = Q.toarray() if sp.issparse(Q) else np.asarray(Q)
        A = A.toarray() if sp.issparse(A) else np.asarray(A)

    x = np.zeros(n)
    both = L & U
    x[both] = 0.5 * (l[both] + u[both])
    onlyl = L & ~U
    x[onlyl] = np.maximum(l[onlyl] + 1.0, 0.0)
    onlyu = U & ~L
    x[onlyu] = np.minimum(u[onlyu] - 1.0, 0.0)
    y = np.zeros(m)
    scale = max(1.0, np.max(np.abs(q), initial=0.0))
    zl = np.full(li.size, scale)
    zu = np.full(ui.size, scale)
    reg_p, reg_d = 1e-10, 1e-10
    status = Status.ITER_LIMIT
    it = 0
    for it in range(1, max_iter + 1):
        sl = x[li] - l[li]
        su = u[ui] - x[ui]
        rd = Q @ x + q - A.T @ y
        rd[li] -= zl
        rd[ui] += zu
        rp = A @ x - b
        mu = (sl @ zl + su @ zu) / ncomp if ncomp else 0.0
        comp = max(np.max(sl * zl, initial=0.0), np.max(su * zu, initial=0.0))
        if max(np.max(np.abs(rd), initial=0.0), np.max(np.abs(rp), initial=0.0), comp) <= tol:
            status = Status.OPTIMAL
            break
        # keep slacks positive when rounding eats them
        sl = np.maximum(sl, 1e-14 * (1.0 + np.abs(l[li])))
        su = np.maximum(su, 1e-14 * (1.0 + np.abs(u[ui])))
        # divergence guard on the net bound multiplier: on very narrow boxes
        # both sides grow together while their difference stays bounded
        znet = np.zeros(n)
        znet[li] += zl
        znet[ui] -= zu
        if not np.isfinite(mu) or max(np.max(np.abs(znet), initial=0), np.max(np.abs(y), initial=0)) > 1e13:
            break
        d = np.zeros(n)
        d[li] += zl / sl
        d[ui] += zu / su
        K = _kkt_matrix(Q + (np.diag(d) if dense else sp.diags(d)), A, reg_p, reg_d)
        f = _Factor(K)

        def direction(rcl, rcu):
            r1 = -rd.copy()
            r1[li] += rcl / sl
            r1[ui] -= rcu / su
            sol = f.solve(np.concatenate([r1, -rp]))
            dx = sol[:n]
            dy = -sol[n:]
            dzl = (rcl - zl * dx[li]) / sl
            dzu = (rcu + zu * dx[ui]) / su
            return dx, dy, dzl, dzu

        def max_step(dx, dzl, dzu):
            a = 1.0
            for v, dv in ((sl, dx[li]), (su, -dx[ui]), (zl, dzl), (zu, dzu)):
                neg = dv < 0
                if np.any(neg):
                    a = min(a, float(np.min(-v[neg] / dv[neg])))
            return a

        dx, dy, dzl, dzu = direction(-sl * zl, -su * zu)
        if ncomp:
            a_aff = max_step(dx, dzl, dzu)
            mu_aff = ((sl + a_aff * dx[li]) @ (zl + a_aff * dzl) + (su - a_aff * dx[ui]) @ (zu + a_aff * dzu)) / ncomp
            sigma = min(1.0, (mu_aff / mu) ** 3) if mu > 0 else 0.0
            dx, dy, dzl, dzu = direction(
                sigma * mu - sl * zl - dx[li] * dzl,
                sigma * mu - su * zu + dx[ui] * dzu,
            )
            alpha = min(1.0, 0.995 * max_step(dx, dzl, dzu))
        else:
            alpha = 1.0
        x = x + alpha * dx
        y = y + alpha * dy
        zl = zl + alpha * dzl
        zu = zu + alpha * dzu
    full_zl = np.zeros(n)
    full_zu = np.zeros(n)
    full_zl[li] = zl
    full_zu[ui] = zu
    return x, y, full_zl, full_zu, status, it


POLISH_PROX = 1e-8  # pull toward the interior iterate along directions the objective leaves free


def _polish(Q, q, A, b, l, u, x, zl, zu):
    """Re-solve with the active set guessed from an interior iterate.

    The reduced system is regularized by a small proximal term centred at the
    iterate, so variables the objective does not pin down stay where the
    interior point put them instead of drifting along a null space.
    """
    act_l = np.isfinite(l) & ((x - l) < zl)
    act_u = np.isfinite(u) & ((u - x) < zu) & ~act_l
    # a guessed-free variable that lands outside its box joins the active set
    for _ in range(4):
        out = _polish_once(Q, q, A, b, l, u, x, act_l, act_u)
        if out is None:
            return None
        xp = out[0]
        lo_hit = ~act_l & ~act_u & (xp < l)
        hi_hit = ~act_l & ~act_u & (xp > u)
        if not (lo_hit.any() or hi_hit.any()):
            break
        act_l, act_u = act_l | lo_hit, act_u | hi_hit
    return out


def _polish_once(Q, q, A, b, l, u, x, act_l, act_u):
    n = q.shape[0]
    act = act_l | act_u
    free = ~act
    xa = np.where(act_l, l, np.where(act_u, u, 0.0))
    F = np.flatnonzero(free)
    m = A.shape[0]
    if n + m <= DENSE_MAX:
        Qc = Q.toarray() if sp.issparse(Q) else np.asarray(Q)
        Ad = A.toarray() if sp.issparse(A) else np.asarray(A)
        QFF, AF = Qc[np.ix_(F, F)], Ad[:, F]
        K = _kkt_matrix(QFF, AF, POLISH_PROX, 1e-11)
    else:
        Qc = sp.csr_matrix(Q)
        QFF = Qc[F][:, F]
        AF = A[:, F]
        K = _kkt_matrix(QFF, AF, POLISH_PROX, 1e-11) if m else sp.csc_matrix(QFF + POLISH_PROX * sp.identity(F.size))
    rhs1 = -(q[F] + Qc[F] @ xa) + POLISH_PROX * x[F]
    rhs2 = b - A @ xa
    rhs = np.concatenate([rhs1, rhs2])
    try:
        sol = _solve_refined(K, K, rhs, steps=5)
    except (RuntimeError, la.LinAlgError, ValueError):
        return None
    if not np.all(np.isfinite(sol)):
        return None
    xp = xa.copy()
    xp[F] = sol[: F.size]
    y = -sol[F.size:] if AF.shape[0] else np.zeros(A.shape[0])
    g = Qc @ xp + q - A.T @ y
    pzl = np.where(act_l, g, 0.0)
    pzu = np.where(act_u, -g, 0.0)
    return xp, y, pzl, pzu


def _residual(Q, q, A, b, l, u, x, y, zl, zu):
    return kkt_residual(
        QpProblem(Q, q, A, b, l, u), QpSolution(x, y, zl, zu, Status.OPTIMAL, 0.0)
    )


def solve_qp(p: QpProblem, tol: float = 1e-8, max_iter: int = 100, polish: bool = True) -> QpSolution:
    """Solve a convex QP.

    Parameters
    ----------
    p : QpProblem
        Problem with PSD ``Q``.
    tol : float
        Target KKT residual (see :func:`kkt_residual`).
    max_iter : int
        Interior-point iteration limit.

    Returns
    -------
    QpSolution
        ``status`` is ``Optimal`` or ``IterLimit`` (best iterate, flagged).

    Raises
    ------
    QpInfeasible
        Bounds cross, or no point satisfies the equalities within the bounds.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    n, m = p.n, p.m
    l, u = p.lower, p.upper
    if np.any(l > u):
        raise QpInfeasible("lower bound exceeds upper bound")
    # boxes narrower than rounding noise are treated as fixed at their midpoint
    with np.errstate(invalid="ignore"):
        fixed = np.isfinite(l) & np.isfinite(u) & ((u - l) <= 1e-12 * (1.0 + np.maximum(np.abs(l), np.abs(u))))
    if np.any(fixed & (l != u)):
        mid = 0.5 * (l + u)
        l = np.where(fixed, mid, l)
        u = np.where(fixed, mid, u)
    free = np.flatnonzero(~fixed)
    x = np.where(fixed, l, 0.0)
    Q = sp.csr_matrix(p.Q)
    A = sp.csr_matrix(p.A)
    Qf = Q[free][:, free]
    qf = p.q[free] + Q[free][:, np.flatnonzero(fixed)] @ x[fixed]
    Af = A[:, free]
    bf = p.b - A @ x
    # rows left without free entries must already hold
    nnz_rows = np.diff(Af.indptr) > 0
    dead = ~nnz_rows
    if np.any(np.abs(bf[dead]) > tol * (1 + np.abs(p.b[dead]))):
        raise QpInfeasible("equality rows on fixed variables are violated")
    rows = np.flatnonzero(nnz_rows)
    Ar, br = Af[rows], bf[rows]
    lf, uf = l[free], u[free]

    xf, yr, zlf, zuf, status, iters = _ipm(Qf, qf, Ar, br, lf, uf, tol, max_iter)
    best = (xf, yr, zlf, zuf)
    best_res = _residual(Qf, qf, Ar, br, lf, uf, *best)
    polished = False
    if polish and free.size:
        pol = _polish(Qf, qf, Ar, br, lf, uf, xf, zlf, zuf)
        if pol is not None:
            res = _residual(Qf, qf, Ar, br, lf, uf, *pol)
            if res <= best_res or res <= tol:
                best, best_res, polished = pol, res, True
    if best_res <= tol:
        status = Status.OPTIMAL
    elif status == Status.OPTIMAL:
        status = Status.OPTIMAL if best_res <= 10 * tol else Status.ITER_LIMIT
    if status != Status.OPTIMAL:
        if not _feasible(Ar, br, lf, uf):
            raise QpInfeasible("no point satisfies the equalities within the bounds")
        log.warning("QP stopped at KKT residual %.3g (tol %.3g, n=%d)", best_res, tol, n)

    xf, yr, zlf, zuf = best
    x[free] = xf
    y = np.zeros(m)
    y[rows] = yr
    zl = np.zeros(n)
    zu = np.zeros(n)
    zl[free] = zlf
    zu[free] = zuf
    if np.any(fixed):
        g = (Q @ x + p.q - A.T @ y)[fixed]
        zl[fixed] = np.maximum(g, 0.0)
        zu[fixed] = np.maximum(-g, 0.0)
    return QpSolution(x, y, zl, zu, status, p.objective(x), iters, polished)


def solve_qp_batch(p: QpProblem, fixed_idx, values, tol: float = 1e-9, max_iter: int = 80,
                   chunk: int = 1024) -> np.ndarray:
    """Objectives of many copies of ``p`` that differ only in fixed values.

    Copy ``k`` pins ``x[fixed_idx] = values[k]``.  Requires a diagonal ``Q``;
    the Newton systems are then reduced to the normal equations
    ``A D^-1 A' + delta I`` and solved for the whole batch at once.  Entries
    that do not converge (infeasible copies included) come back as ``nan``
    so the caller can retry them with :func:`solve_qp`.
    """
    Q = sp.csr_matrix(p.Q)
    if Q.nnz and np.any(sp.triu(Q, 1).nnz or sp.tril(Q, -1).nnz):
        raise ValueError("batch path needs a diagonal Q")
    values = np.atleast_2d(np.asarray(values, float))
    fixed_idx = np.asarray(fixed_idx, int)
    qd_all = Q.diagonal()
    l, u = p.lower.copy(), p.upper.copy()
    pinned = (l == u)
    pinned[fixed_idx] = True
    free = np.flatnonzero(~pinned)
    other = np.flatnonzero(pinned)
    A = sp.csr_matrix(p.A)
    Af = A[:, free].toarray()
    live = np.flatnonzero(np.any(Af != 0, axis=1))
    dead = np.setdiff1d(np.arange(p.m), live)
    Af = Af[live]
    Ax = A[:, other].toarray()
    pos = {j: k for k, j in enumerate(other)}
    sel = np.array([pos[j] for j in fixed_idx], int)
    out = np.full(values.shape[0], np.nan)
    for start in range(0, values.shape[0], chunk):
        xo = np.broadcast_to(l[other], (min(chunk, values.shape[0] - start), other.size)).copy()
        xo[:, sel] = values[start:start + chunk]
        const = p.offset + xo @ p.q[other] + 0.5 * (xo**2) @ qd_all[other]
        b = p.b[None, :] - xo @ Ax.T
        ok = np.all(np.abs(b[:, dead]) <= 1e-9 * (1 + np.abs(p.b[dead])), axis=1)
        f = _ipm_batch(qd_all[free], p.q[free], Af, b[:, live], l[free], u[free], tol, max_iter)
        out[start:start + xo.shape[0]] = np.where(ok, f + const, np.nan)
    return out


def _ipm_batch(qd, q, A, B, l, u, tol, max_iter):
    """Vectorized interior point for diagonal-Q problems sharing ``A``, ``l``, ``u``."""
    nb, n, m = B.shape[0], q.size, A.shape[0]
    li, ui = np.flatnonzero(np.isfinite(l)), np.flatnonzero(np.isfinite(u))
    ncomp = li.size + ui.size
    x0 = np.zeros(n)
    both = np.isfinite(l) & np.isfinite(u)
    x0[both] = 0.5 * (l[both] + u[both])
    x0 = np.where(np.isfinite(l) & ~both, np.maximum(l + 1.0, 0.0), x0)
    x0 = np.where(np.isfinite(u) & ~both, np.minimum(u - 1.0, 0.0), x0)
    x = np.tile(x0, (nb, 1))
    y = np.zeros((nb, m))
    scale = max(1.0, np.max(np.abs(q), initial=0.0))
    zl = np.full((nb, li.size), scale)
    zu = np.full((nb, ui.size), scale)
    done = np.zeros(nb, bool)
    obj = np.full(nb, np.nan)
    reg_p, reg_d = 1e-10, 1e-10
    # entries of M = A diag(1/d) A' as a linear map of 1/d
    As = sp.csr_matrix(A)
    chol = _BatchCholesky((abs(As) @ abs(As).T).toarray() != 0)
    ei, ej = chol.entries.T
    P = sp.csr_matrix(As[ei].multiply(As[ej]))
    for _ in range(max_iter):
        sl = x[:, li] - l[li]
        su = u[ui] - x[:, ui]
        rd = qd * x + q - y @ A
        rd[:, li] -= zl
        rd[:, ui] += zu
        rp = x @ A.T - B
        comp = np.maximum(np.max(sl * zl, axis=1, initial=0.0), np.max(su * zu, axis=1, initial=0.0))
        err = np.maximum(np.maximum(np.max(np.abs(rd), axis=1, initial=0.0),
                                    np.max(np.abs(rp), axis=1, initial=0.0)), comp)
        newly = (err <= tol) & ~done
        obj[newly] = (0.5 * qd * x[newly] ** 2 + q * x[newly]).sum(axis=1)
        done |= newly
        act = ~done & np.isfinite(err) & (np.max(np.abs(y), axis=1, initial=0.0) < 1e13)
        act &= np.isfinite(zl).all(1) & np.isfinite(zu).all(1)
        if not act.any():
            break
        k = np.flatnonzero(act)
        sl, su, rd, rp = sl[k], su[k], rd[k], rp[k]
        zlk, zuk = zl[k], zu[k]
        sl = np.maximum(sl, 1e-14 * (1.0 + np.abs(l[li])))
        su = np.maximum(su, 1e-14 * (1.0 + np.abs(u[ui])))
        mu = ((sl * zlk).sum(1) + (su * zuk).sum(1)) / ncomp if ncomp else np.zeros(k.size)
        d = np.tile(qd + reg_p, (k.size, 1))
        d[:, li] += zlk / sl
        d[:, ui] += zuk / su
        dinv = 1.0 / d
        M = (P @ dinv.T).T
        # dual regularization relative to the largest pivot; residuals are
        # recomputed exactly each iteration so it only slows the steps
        big = np.max(np.abs(M[:, chol.diag_slots]), axis=1, initial=1.0)
        C = None
        for rel in (1e-14, 1e-12, 1e-10):
            try:
                Mr = M.copy()
                Mr[:, chol.diag_slots] += (rel * big + reg_d)[:, None]
                C = chol.factor(Mr)
                break
            except np.linalg.LinAlgError:
                pass
        if C is None:
            break  # leftovers go back to the scalar solver

        def direction(rcl, rcu):
            r1 = -rd.copy()
            r1[:, li] += rcl / sl
            r1[:, ui] -= rcu / su
            rhs = (r1 * dinv) @ A.T + rp
            w = C.solve(rhs)
            dx = dinv * (r1 - w @ A)
            dzl = (rcl - zlk * dx[:, li]) / sl
            dzu = (rcu + zuk * dx[:, ui]) / su
            return dx, -w, dzl, dzu

        def max_step(dx, dzl, dzu):
            a = np.ones(k.size)
            for v, dv in ((sl, dx[:, li]), (su, -dx[:, ui]), (zlk, dzl), (zuk, dzu)):
                with np.errstate(divide="ignore", invalid="ignore"):
                    r = np.where(dv < 0, -v / dv, np.inf)
                a = np.minimum(a, np.min(r, axis=1, initial=np.inf))
            return a

        dx, dy, dzl, dzu = direction(-sl * zlk, -su * zuk)
        a = max_step(dx, dzl, dzu)[:, None]
        mu_aff = (((sl + a * dx[:, li]) * (zlk + a * dzl)).sum(1)
                  + ((su - a * dx[:, ui]) * (zuk + a * dzu)).sum(1)) / max(ncomp, 1)
        with np.errstate(divide="ignore", invalid="ignore"):
            sigma = np.where(mu > 0, np.minimum(1.0, (mu_aff / mu) ** 3), 0.0)[:, None]
        dx, dy, dzl, dzu = direction(sigma * mu[:, None] - sl * zlk - dx[:, li] * dzl,
                                     sigma * mu[:, None] - su * zuk + dx[:, ui] * dzu)
        alpha = np.minimum(1.0, 0.995 * max_step(dx, dzl, dzu))[:, None]
        x[k] += alpha * dx
        y[k] += alpha * dy
        zl[k] = zlk + alpha * dzl
        zu[k] = zuk + alpha * dzu
    return obj


class _BatchCholesky:
    """Cholesky of many SPD matrices sharing one sparsity pattern.

    The elimination order (greedy minimum degree) and the fill pattern are
    computed once from ``pattern``.  Matrices are passed as the values of
    the ``entries`` (pairs ``i >= j`` of the filled lower triangle), so a
    batch is a ``(B, len(entries))`` array and every numpy operation in
    factor and solve is vectorized across it.
    """

    def __init__(self, pattern):
        G = np.asarray(pattern, bool) | np.eye(len(pattern), dtype=bool)
        left = set(range(len(G)))
        self.order, self.below = [], []
        while left:
            j = min(left, key=lambda v: (int(G[v, list(left)].sum()), v))
            left.discard(j)
            nz = np.array(sorted(i for i in left if G[i, j]), int)
            G[np.ix_(nz, nz)] = True
            self.order.append(j)
            self.below.append(nz)
        # store (i, j) and (j, i) under one slot
        pos = {}
        for j, nz in zip(self.order, self.below):
            for i in [j, *nz]:
                pos.setdefault((min(i, j), max(i, j)), len(pos))
        self.entries = np.array(list(pos), int).reshape(-1, 2)
        key = lambda a, b: pos[(min(a, b), max(a, b))]
        self.plan = []
        for j, nz in zip(self.order, self.below):
            a, b = np.tril_indices(nz.size)
            upd = np.array([key(nz[p], nz[q]) for p, q in zip(a, b)], int)
            self.plan.append((key(j, j), np.array([key(i, j) for i in nz], int), upd, a, b))
        self.diag_slots = np.array([key(i, i) for i in range(len(G))], int)

    def factor(self, M):
        """``M`` holds entry values, shape ``(B, len(entries))``; it is overwritten."""
        self.diag, self.cols = [], []
        for dslot, cslots, upd, a, b in self.plan:
            d = M[:, dslot]
            if np.any(~(d > 0)):
                raise np.linalg.LinAlgError("not positive definite")
            d = np.sqrt(d)
            c = M[:, cslots] / d[:, None]
            if upd.size:
                M[:, upd] -= c[:, a] * c[:, b]
            self.diag.append(d)
            self.cols.append(c)
        return self

    def solve(self, r):
        y = r.copy()
        for j, nz, d, c in zip(self.order, self.below, self.diag, self.cols):
            y[:, j] /= d
            if nz.size:
                y[:, nz] -= c * y[:, j][:, None]
        for j, nz, d, c in zip(self.order[::-1], self.below[::-1], self.diag[::-1], self.cols[::-1]):
            if nz.size:
                y[:, j] -= np.einsum("bk,bk->b", c, y[:, nz])
            y[:, j] /= d
        return y


def _feasible(A, b, l, u) -> bool:
    from scipy.optimize import lsq_linear

    if A.shape[0] == 0:
        return True
    lo = np.where(np.isfinite(l), l, -np.inf)
    hi = np.where(np.isfinite(u), u, np.inf)
    res = lsq_linear(A, b, bounds=(lo, hi), method="trf", tol=1e-12, lsmr_tol="auto", max_iter=5000)
    return float(np.max(np.abs(A @ res.x - b), initial=0.0)) <= 1e-6 * (1 + np.max(np.abs(b), initial=0.0))


def remove_redundant_rows(A, b, tol: float = 1e-9):
    """Drop linearly dependent equality rows (pivoted QR on A').

    Raises :class:`QpInfeasible` when a dependent row disagrees on ``b``.
    """
    Ad = A.toarray() if sp.issparse(A) else np.asarray(A, float)
    if Ad.shape[0] == 0:
        return A, b
    _, R, piv = la.qr(Ad.T, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > tol * max(1.0, diag[0] if diag.size else 1.0)))
    keep = np.sort(piv[:rank])
    A2, b2 = Ad[keep], np.asarray(b)[keep]
    sol = np.linalg.lstsq(A2, b2, rcond=None)[0]
    if np.max(np.abs(Ad @ sol - b), initial=0.0) > 1e-7 * (1 + np.max(np.abs(b), initial=0.0)):
        raise QpInfeasible("inconsistent equality system")
    return (sp.csr_matrix(A2) if sp.issparse(A) else A2), b2


def dump_qp(p: QpProblem, path) -> None:
    """Write a plain-text dump (triplets and vectors) for offline inspection."""
    Q, A = sp.coo_matrix(p.Q), sp.coo_matrix(p.A)
    lines = [f"# QP n={p.n} m={p.m} offset={p.offset!r}", "# Q (i j value)"]
    lines += [f"{i} {j} {v:.17g}" for i, j, v in zip(Q.row, Q.col, Q.data)]
    lines.append("# A (i j value)")
    lines += [f"{i} {j} {v:.17g}" for i, j, v in zip(A.row, A.col, A.data)]
    lines.append("# variables (index name q lower upper)")
    names = p.names or tuple(f"x{i}" for i in range(p.n))
    lines += [f"{i} {nm} {p.q[i]:.17g} {p.lower[i]:.17g} {p.upper[i]:.17g}" for i, nm in enumerate(names)]
    lines.append("# b")
    lines += [f"{i} {v:.17g}" for i, v in enumerate(p.b)]
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------


@dataclass
class QpBuilder:
    """Incremental assembly of a :class:`QpProblem` with named variable blocks.

    Quadratic terms are diagonal, which is all the market problems need.
    """

    lower: list = field(default_factory=list)
    upper: list = field(default_factory=list)
    names: list = field(default_factory=list)
    qdiag: list = field(default_factory=list)
    lin: list = field(default_factory=list)
    rows: list = field(default_factory=list)
    cols: list = field(default_factory=list)
    vals: list = field(default_factory=list)
    rhs: list = field(default_factory=list)
    offset: float = 0.0
    n: int = 0
    m: int = 0

    def add_vars(self, name: str, shape, lower, upper) -> np.ndarray:
        shape = (shape,) if np.isscalar(shape) else tuple(shape)
        size = int(np.prod(shape))
        idx = np.arange(self.n, self.n + size).reshape(shape)
        self.n += size
        self.lower.append(np.broadcast_to(np.asarray(lower, float), shape).ravel().copy())
        self.upper.append(np.broadcast_to(np.asarray(upper, float), shape).ravel().copy())
        self.qdiag.append(np.zeros(size))
        self.lin.append(np.zeros(size))
        flat = np.ndindex(*shape) if len(shape) > 1 else ((i,) for i in range(size))
        self.names.extend(f"{name}{list(k)}" for k in flat)
        return idx

    def _vec(self, parts):
        return np.concatenate(parts) if parts else np.zeros(0)

    def add_quadratic(self, idx, coef):
        """Add ``1/2 coef x_i^2`` for each index."""
        q = self._vec(self.qdiag)
        np.add.at(q, np.ravel(idx), np.broadcast_to(coef, np.shape(idx)).ravel())
        self.qdiag = [q]

    def add_linear(self, idx, coef):
        c = self._vec(self.lin)
        np.add.at(c, np.ravel(idx), np.broadcast_to(coef, np.shape(idx)).ravel())
        self.lin = [c]

    def add_proximal(self, idx, center, rho):
        """Add ``rho/2 (x - center)^2`` elementwise."""
        center = np.broadcast_to(np.asarray(center, float), np.shape(idx))
        self.add_quadratic(idx, rho)
        self.add_linear(idx, -rho * center)
        self.offset += 0.5 * rho * float(np.sum(center**2))

    def add_rows(self, terms, rhs) -> np.ndarray:
        """Add equality rows ``sum_k coef_k * x[idx_k] = rhs``, vectorised.

        ``terms`` is a list of ``(idx, coef)`` whose arrays broadcast against
        ``rhs``; returns the row indices.
        """
        rhs = np.atleast_1d(np.asarray(rhs, float))
        k = rhs.size
        r = np.arange(self.m, self.m + k)
        for idx, coef in terms:
            idx = np.broadcast_to(np.asarray(idx), rhs.shape).ravel()
            coef = np.broadcast_to(np.asarray(coef, float), rhs.shape).ravel()
            self.rows.append(r)
            self.cols.append(idx)
            self.vals.append(coef)
        self.rhs.append(rhs.ravel())
        self.m += k
        return r

    def add_inequalities(self, terms, lo, hi, name="slack") -> np.ndarray:
        """Add ``lo <= sum coef x <= hi`` through a slack variable ``s`` with
        ``sum coef x - s = 0``, ``lo <= s <= hi``; returns slack indices."""
        lo = np.atleast_1d(np.asarray(lo, float))
        hi = np.broadcast_to(np.asarray(hi, float), lo.shape)
        s = self.add_vars(name, lo.shape, lo, hi)
        self.add_rows(list(terms) + [(s, -1.0)], np.zeros(lo.shape))
        return s

    def build(self) -> QpProblem:
        n, m = self.n, self.m
        cat = lambda parts, dt=float: np.concatenate(parts).astype(dt) if parts else np.zeros(0, dt)
        A = sp.csr_matrix((cat(self.vals), (cat(self.rows, int), cat(self.cols, int))), shape=(m, n))
        Q = sp.diags(self._vec(self.qdiag), format="csr") if n else sp.csr_matrix((0, 0))
        return QpProblem(Q, self._vec(self.lin), A, cat(self.rhs), self._vec(self.lower), self._vec(self.upper),
                         tuple(self.names), self.offset)
