import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import qp_active_set_oracle
from hubmarket.qp import (DimensionMismatch, QpBuilder, QpInfeasible, QpSolution, Status, _BatchCholesky, dump_qp,
                          kkt_residual, make_qp, solve_qp, solve_qp_batch)


def random_qp(seed, n=5, m=2, box=2.0):
    rng = np.random.default_rng(seed)
    M = rng.normal(size=(n, n))
    Q = M @ M.T / n + 0.05 * np.eye(n)
    q = rng.normal(size=n) * 3
    A = rng.normal(size=(m, n))
    x0 = rng.uniform(-box / 2, box / 2, size=n)  # strictly feasible point
    b = A @ x0
    return Q, q, A, b, np.full(n, -box), np.full(n, box)


def test_interior_minimum():
    s = solve_qp(make_qp([[1.0]], [0.0], lower=[-1.0], upper=[1.0]))
    assert s.status == Status.OPTIMAL
    assert s.x[0] == pytest.approx(0.0, abs=1e-9)
    assert s.objective == pytest.approx(0.0, abs=1e-9)


def test_active_upper_bound_multiplier():
    # min 1/2 (x-2)^2 = 1/2 x^2 - 2x + 2, x <= 1
    s = solve_qp(make_qp([[1.0]], [-2.0], lower=[-np.inf], upper=[1.0], offset=2.0))
    assert s.x[0] == pytest.approx(1.0, abs=1e-9)
    assert s.upper_duals[0] == pytest.approx(1.0, abs=1e-8)
    assert s.objective == pytest.approx(0.5, abs=1e-9)


def test_kkt_residual_exact_point_and_perturbation():
    p = make_qp([[1.0]], [-2.0], lower=[-np.inf], upper=[1.0])
    exact = QpSolution(np.array([1.0]), np.zeros(0), np.zeros(1), np.array([1.0]), Status.OPTIMAL, -1.5)
    assert kkt_residual(p, exact) <= 1e-12
    moved = QpSolution(np.array([1.1]), np.zeros(0), np.zeros(1), np.array([1.0]), Status.OPTIMAL, 0.0)
    assert kkt_residual(p, moved) >= 0.1 - 1e-12


def test_kkt_residual_dimension_mismatch():
    p = make_qp(np.eye(2), [0.0, 0.0])
    bad = QpSolution(np.zeros(3), np.zeros(0), np.zeros(3), np.zeros(3), Status.OPTIMAL, 0.0)
    with pytest.raises(DimensionMismatch):
        kkt_residual(p, bad)


@pytest.mark.parametrize("seed", range(12))
def test_random_qp_matches_active_set_oracle(seed):
    Q, q, A, b, lo, hi = random_qp(seed)
    s = solve_qp(make_qp(Q, q, A, b, lo, hi), 1e-10)
    x_ref, f_ref = qp_active_set_oracle(Q, q, A, b, lo, hi)
    assert x_ref is not None
    assert np.max(np.abs(s.x - x_ref)) <= 1e-6
    assert s.objective == pytest.approx(f_ref, abs=1e-6)


@pytest.mark.parametrize("seed", range(6))
def test_self_consistent_kkt_residual(seed):
    p = make_qp(*random_qp(100 + seed, n=8, m=3))
    s = solve_qp(p, 1e-8)
    assert s.status == Status.OPTIMAL
    assert kkt_residual(p, s) <= 1e-8


def test_inconsistent_equalities_infeasible():
    p = make_qp(np.eye(2), [0.0, 0.0], A=[[1.0, 1.0]], b=[5.0], lower=[0.0, 0.0], upper=[1.0, 1.0])
    with pytest.raises(QpInfeasible):
        solve_qp(p)


def test_fixed_variables_and_redundant_rows():
    # x0 fixed at 1; the second row repeats the first
    p = make_qp(np.eye(3), [0.0, -1.0, 0.0], A=[[1, 1, 1], [2, 2, 2]], b=[3.0, 6.0],
                lower=[1.0, -5, -5], upper=[1.0, 5, 5])
    s = solve_qp(p, 1e-10)
    assert s.x[0] == 1.0
    assert np.sum(s.x) == pytest.approx(3.0, abs=1e-9)


@given(seed=st.integers(0, 10_000))
def test_no_sampled_feasible_point_beats_solution(seed):
    Q, q, A, b, lo, hi = random_qp(seed, n=4, m=1)
    p = make_qp(Q, q, A, b, lo, hi)
    s = solve_qp(p, 1e-10)
    rng = np.random.default_rng(seed)
    # project samples onto {Ax = b} along the minimum-norm direction, keep those inside the box
    pinv = np.linalg.pinv(A)
    X = rng.uniform(lo, hi, size=(1000, lo.size))
    X = X - (X @ A.T - b) @ pinv.T
    inside = np.all((X >= lo) & (X <= hi), axis=1)
    f = 0.5 * np.einsum("ij,jk,ik->i", X, Q, X) + X @ q
    assert np.all(f[inside] >= s.objective - 1e-6)


@given(seed=st.integers(0, 10_000), scale=st.floats(0.01, 100.0))
def test_scaling_objective_keeps_argmin(seed, scale):
    Q, q, A, b, lo, hi = random_qp(seed)
    x1 = solve_qp(make_qp(Q, q, A, b, lo, hi), 1e-10).x
    x2 = solve_qp(make_qp(scale * Q, scale * q, A, b, lo, hi), 1e-10).x
    assert np.max(np.abs(x1 - x2)) <= 1e-6


def test_deterministic_bitwise():
    p = make_qp(*random_qp(7, n=10, m=4))
    a, b = solve_qp(p), solve_qp(p)
    assert np.array_equal(a.x, b.x)


def test_builder_and_dump(tmp_path):
    qb = QpBuilder()
    x = qb.add_vars("x", 2, 0.0, 4.0)
    qb.add_proximal(x, np.array([1.0, 3.0]), 2.0)
    qb.add_rows([(x[[0]], 1.0), (x[[1]], 1.0)], np.array([2.0]))
    p = qb.build()
    s = solve_qp(p, 1e-10)
    assert s.x == pytest.approx([0.0, 2.0], abs=1e-8)
    dump_qp(p, tmp_path / "p.qp")
    text = (tmp_path / "p.qp").read_text()
    assert text.startswith("# QP n=2 m=1")


def test_batch_cholesky_matches_dense():
    rng = np.random.default_rng(4)
    pattern = np.eye(6, dtype=bool)
    pattern[0, 3] = pattern[3, 0] = pattern[2, 5] = pattern[5, 2] = pattern[1, 2] = pattern[2, 1] = True
    chol = _BatchCholesky(pattern)
    mats = []
    for _ in range(5):
        M = np.where(pattern, rng.normal(size=(6, 6)), 0.0)
        M = M @ M.T + 6 * np.eye(6)  # fills in, but the elimination pattern still covers it
        mats.append(M)
    full = _BatchCholesky(np.ones((6, 6), bool))
    vals = np.array([[M[i, j] for i, j in full.entries] for M in mats])
    r = rng.normal(size=(5, 6))
    w = full.factor(vals).solve(r)
    assert np.allclose(w, [np.linalg.solve(M, v) for M, v in zip(mats, r)], atol=1e-12)
    assert len(chol.entries) < len(full.entries)


def test_batch_objectives_match_scalar_solves():
    qb = QpBuilder()
    z = qb.add_vars("z", 3, 0.0, 1.0)
    x = qb.add_vars("x", 3, -2.0, 2.0)
    qb.add_proximal(x, np.array([0.5, -1.0, 1.5]), 1.0)
    qb.add_linear(z, np.array([0.4, -0.3, 0.2]))
    qb.add_inequalities([(x, 1.0), (z, -2.0)], np.full(3, -1.0), np.full(3, 0.5))
    qb.add_rows([(x[[0]], 1.0), (x[[1]], 1.0), (x[[2]], 1.0)], np.array([0.0]))
    p = qb.build()
    Z = np.array([[0, 0, 0], [1, 0, 1], [0, 1, 1], [1, 1, 1]], float)
    f = solve_qp_batch(p, z, Z)
    for zz, fz in zip(Z, f):
        lo, hi = p.lower.copy(), p.upper.copy()
        lo[z] = hi[z] = zz
        try:
            ref = solve_qp(p.with_bounds(lo, hi), 1e-10).objective
        except QpInfeasible:
            assert np.isnan(fz)  # left for the scalar solver to diagnose
            continue
        assert fz == pytest.approx(ref, abs=1e-7)
    assert np.isnan(f[-1]) and not np.isnan(f[0])


def test_batch_rejects_coupled_quadratic():
    p = make_qp([[2.0, 1.0], [1.0, 2.0]], [0.0, 0.0], lower=[0.0, 0.0], upper=[1.0, 1.0])
    with pytest.raises(ValueError):
        solve_qp_batch(p, [0], [[1.0]])
