import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_hub
from oracles import expansion_price
from hubmarket.hub import build_hub_subproblem, solve_hub
from hubmarket.miqp import (InvalidBounds, MiqpInfeasible, MiqpProblem, TooManyBinaries, _fixed_solve,
                            build_binary_expansion, enumerate_miqp_oracle, solve_miqp)
from hubmarket.qp import QpBuilder, QpInfeasible


def test_grid_zero_to_eighty():
    exp, _ = build_binary_expansion(0.0, 80.0, 3, 10.0, 1)
    assert exp.delta == 10.0
    assert list(exp.levels()) == [0, 10, 20, 30, 40, 50, 60, 70]


def test_grid_one_bit():
    exp, _ = build_binary_expansion(40.0, 100.0, 1, 10.0, 1)
    assert exp.delta == 30.0
    assert list(exp.levels()) == [40.0, 70.0]


def test_linking_row_count():
    exp, rows = build_binary_expansion(0.0, 1.0, 2, 5.0, 1)
    qb = QpBuilder()
    q = qb.add_vars("q", 1, 0.0, 5.0)
    w, z = exp.attach(qb, q)
    assert z.size == 2 and w.size == 2
    assert len(rows) == 8


@pytest.mark.parametrize("args", [(5.0, 5.0, 2, 1.0), (5.0, 1.0, 2, 1.0), (0.0, 1.0, 0, 1.0), (0.0, 1.0, 2, 0.0)])
def test_invalid_bounds(args):
    lo, hi, g, m = args
    with pytest.raises(InvalidBounds):
        build_binary_expansion(lo, hi, g, m, 1)


@given(lmin=st.floats(0, 100), span=st.floats(1, 100), gamma=st.integers(1, 6), data=st.data())
def test_price_reconstruction_bit_exact(lmin, span, gamma, data):
    lmax = lmin + span
    exp, _ = build_binary_expansion(lmin, lmax, gamma, 1.0, 1)
    bits = data.draw(st.lists(st.integers(0, 1), min_size=gamma, max_size=gamma))
    price = float(exp.price(np.array(bits, float)))
    assert price == expansion_price(lmin, lmax, gamma, bits)
    assert lmin <= price <= lmax - exp.delta + 1e-9 * lmax
    assert np.array_equal(exp.bits(price), np.array(bits, float))


def _toy(nbin=4):
    """min sum (x_i - c_i)^2 + z-weighted terms with a knapsack-like row."""
    qb = QpBuilder()
    z = qb.add_vars("z", nbin, 0.0, 1.0)
    x = qb.add_vars("x", nbin, -2.0, 2.0)
    qb.add_proximal(x, np.linspace(-1, 1, nbin), 2.0)
    qb.add_linear(z, np.array([1.0, -2.0, 0.5, -0.7, 0.3, -0.1][:nbin]))
    qb.add_inequalities([(x, 1.0), (z, -1.0)], np.full(nbin, -1.0), np.full(nbin, 1.0), "link")
    return MiqpProblem(qb.build(), z)


def test_four_binaries_match_oracle():
    p = _toy(4)
    a, b = solve_miqp(p), enumerate_miqp_oracle(p)
    assert a.objective == pytest.approx(b.objective, abs=1e-6)
    assert set(np.unique(a.z)) <= {0.0, 1.0}


def test_binaries_fixed_by_bounds_no_branching():
    p = _toy(3)
    lo, hi = p.relaxation.lower.copy(), p.relaxation.upper.copy()
    lo[p.binary] = hi[p.binary] = np.array([1.0, 0.0, 1.0])
    s = solve_miqp(MiqpProblem(p.relaxation.with_bounds(lo, hi), p.binary))
    assert s.nodes == 1
    assert np.array_equal(s.z, [1.0, 0.0, 1.0])


def test_infeasible_linking():
    qb = QpBuilder()
    q = qb.add_vars("q", 1, 8.0, 8.0)  # required flow 8 MW exceeds qty_max 5
    exp, _ = build_binary_expansion(10.0, 20.0, 1, 5.0, 1)
    w, z = exp.attach(qb, q)
    p = MiqpProblem(qb.build(), z.ravel())
    with pytest.raises(MiqpInfeasible):
        solve_miqp(p)
    with pytest.raises(MiqpInfeasible):
        enumerate_miqp_oracle(p)


def test_oracle_single_binary_two_solves():
    p = _toy(1)
    s = enumerate_miqp_oracle(p)
    assert s.nodes == 2
    vals = [_fixed_solve(p, np.array([v]), 1e-10).objective for v in (0.0, 1.0)]
    assert s.objective == pytest.approx(min(vals), abs=1e-9)


def test_oracle_skips_three_infeasible_assignments():
    qb = QpBuilder()
    z = qb.add_vars("z", 4, 0.0, 1.0)
    s_ = qb.add_vars("s", 1, 2.0, 6.0)
    qb.add_linear(z, np.array([0.3, 0.2, 1.0, 1.5]))
    qb.add_rows([(z[[0]], 1.0), (z[[1]], 1.0), (z[[2]], 2.0), (z[[3]], 2.0), (s_, -1.0)], np.zeros(1))
    p = MiqpProblem(qb.build(), z)
    feasible = []
    for bits in itertools.product((0.0, 1.0), repeat=4):
        try:
            feasible.append(_fixed_solve(p, np.array(bits), 1e-10).objective)
        except QpInfeasible:
            pass
    assert len(feasible) == 13
    best = enumerate_miqp_oracle(p)
    assert best.objective == pytest.approx(min(feasible), abs=1e-9)
    assert best.objective == pytest.approx(0.5, abs=1e-9)  # z0 and z1
    assert solve_miqp(p).objective == pytest.approx(0.5, abs=1e-6)


def test_oracle_guard():
    qb = QpBuilder()
    z = qb.add_vars("z", 21, 0.0, 1.0)
    with pytest.raises(TooManyBinaries):
        enumerate_miqp_oracle(MiqpProblem(qb.build(), z))


@given(seed=st.integers(0, 100_000))
def test_branch_and_bound_matches_oracle(seed):
    hub, req, gas, rho, gamma = random_hub(seed)
    p = build_hub_subproblem(hub, req, gas, rho, gamma)
    assert p.num_binaries <= 12
    assert solve_miqp(p).objective == pytest.approx(enumerate_miqp_oracle(p).objective, abs=1e-6)


@pytest.mark.parametrize("seed", [3, 11, 29])
def test_node_bounds_never_exceed_subtree_optimum(seed):
    hub, req, gas, rho, _ = random_hub(seed)
    p = build_hub_subproblem(hub, req[:1], gas[:1], rho, 2)
    k = p.num_binaries
    table = {}
    for bits in itertools.product((0.0, 1.0), repeat=k):
        try:
            table[bits] = _fixed_solve(p, np.array(bits), 1e-10).objective
        except QpInfeasible:
            pass
    seen = []

    def hook(bound, lo, hi):
        inside = [v for b, v in table.items() if np.all(np.array(b) >= lo) and np.all(np.array(b) <= hi)]
        if inside:
            seen.append(bound - min(inside))

    solve_miqp(p, on_node=hook)
    assert seen and max(seen) <= 1e-6


def test_finer_grid_never_worse():
    hub, req, gas, rho, _ = random_hub(5)
    profits = [solve_hub(hub, req, gas, rho, g).profit for g in (1, 2, 3)]
    assert profits[0] <= profits[1] + 1e-6 <= profits[2] + 2e-6


def test_linking_exact_at_solution():
    hub, req, gas, rho, gamma = random_hub(8)
    p = build_hub_subproblem(hub, req, gas, rho, gamma)
    s = solve_miqp(p)
    x = s.x
    for qty, w, z, M in ((p.idx["sell"], p.idx["w_sell"], p.idx["z_sell"], p.sell_exp.qty_max),
                         (p.idx["buy"], p.idx["w_buy"], p.idx["z_buy"], p.buy_exp.qty_max)):
        zz = np.rint(x[z])
        prod = x[qty][:, None] * zz
        assert np.max(np.abs(x[w] - prod)) <= 1e-8
        assert np.all(x[w] <= M * zz + 1e-8)
