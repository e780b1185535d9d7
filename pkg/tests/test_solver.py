import itertools

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from gridcoord.errors import DomainError
from gridcoord.solver import (INF, LinearProgram, MixedIntegerProgram, ModelBuilder, QuadraticProgram, Status,
                              max_violation, solve_lp, solve_milp, solve_qp, to_lp_text, write_lp)
from oracles import qp_box_eq, simplex_leq


def dense_lp(c, A, lo, hi, lb, ub) -> LinearProgram:
    A = np.asarray(A, dtype=float)
    r, cidx = np.nonzero(A)
    return LinearProgram(np.asarray(c, float), r, cidx, A[r, cidx], np.asarray(lo, float), np.asarray(hi, float),
                         np.asarray(lb, float), np.asarray(ub, float))


def test_lp_single_bound():
    b = ModelBuilder()
    b.var("x", lb=3.0, cost=1.0)
    sol = solve_lp(b.lp())
    assert sol.status is Status.OPTIMAL
    assert sol.x[0] == pytest.approx(3.0) and sol.objective == pytest.approx(3.0)


def test_lp_face_objective_unique():
    b = ModelBuilder()
    x = b.var("x", 0.0, cost=-1.0)
    y = b.var("y", 0.0, cost=-1.0)
    b.row([(x, 1.0), (y, 1.0)], hi=1.0)
    sol = solve_lp(b.lp())
    assert sol.objective == pytest.approx(-1.0)


def test_lp_infeasible_and_unbounded():
    b = ModelBuilder()
    x = b.var("x", 0.0, 1.0, cost=1.0)
    b.row([(x, 1.0)], lo=2.0)
    assert solve_lp(b.lp()).status is Status.INFEASIBLE
    b = ModelBuilder()
    b.var("x", cost=-1.0)
    assert solve_lp(b.lp()).status is Status.UNBOUNDED


def test_lp_iteration_limit():
    rng = np.random.default_rng(0)
    A = rng.uniform(0, 1, (20, 40))
    lp = dense_lp(-rng.uniform(0, 1, 40), A, np.full(20, -INF), rng.uniform(1, 10, 20), np.zeros(40), np.full(40, INF))
    sol = solve_lp(lp, max_iter=1)
    assert sol.status in (Status.ITERATION_LIMIT, Status.OPTIMAL)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_lp_matches_textbook_simplex(seed):
    rng = np.random.default_rng(seed)
    m, n = 20, 40
    A = rng.uniform(0, 1, (m, n)) * (rng.random((m, n)) < 0.5)
    A[rng.integers(0, m, n), np.arange(n)] += 0.1  # every column bounded by some row
    b = rng.uniform(1, 10, m)
    c = rng.uniform(-1, 1, n)
    status, x_ref, obj_ref = simplex_leq(c, A, b)
    assert status == "optimal"
    lp = dense_lp(c, A, np.full(m, -INF), b, np.zeros(n), np.full(n, INF))
    sol = solve_lp(lp)
    assert sol.status is Status.OPTIMAL
    assert sol.objective == pytest.approx(obj_ref, abs=1e-7 * max(1.0, abs(obj_ref)))
    assert max_violation(lp, sol.x) <= 1e-7


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.1, 100.0))
def test_lp_objective_scaling(seed, lam):
    rng = np.random.default_rng(seed)
    A = rng.uniform(0.1, 1, (6, 8))
    lp = dense_lp(rng.uniform(-1, 1, 8), A, np.full(6, -INF), rng.uniform(1, 5, 6), np.zeros(8), np.full(8, INF))
    base, scaled = solve_lp(lp), solve_lp(lp.scaled(lam))
    assert scaled.objective == pytest.approx(lam * base.objective, rel=1e-7, abs=1e-9)
    # an optimal point of one is optimal (and feasible) for the other
    assert lp.objective(scaled.x) == pytest.approx(base.objective, rel=1e-7, abs=1e-9)
    assert max_violation(lp, scaled.x) <= 1e-7


def test_lp_check_rejects_bad_bounds():
    lp = dense_lp([1.0], [[1.0]], [0.0], [1.0], [2.0], [1.0])
    with pytest.raises(DomainError):
        solve_lp(lp)


def test_milp_knapsack():
    b = ModelBuilder()
    a = b.var("a", binary=True, cost=-3.0)
    c = b.var("b", binary=True, cost=-2.0)
    b.row([(a, 1.0), (c, 1.0)], hi=1.0)
    sol = solve_milp(b.mip())
    assert sol.status is Status.OPTIMAL
    assert sol.x.round().tolist() == [1.0, 0.0] and sol.objective == pytest.approx(-3.0)


def test_milp_integer_mask_must_be_binary():
    lp = dense_lp([1.0], [[1.0]], [-INF], [5.0], [0.0], [3.0])
    with pytest.raises(DomainError):
        solve_milp(MixedIntegerProgram(lp, np.array([True])))


def test_milp_infeasible():
    b = ModelBuilder()
    a = b.var("a", binary=True)
    c = b.var("b", binary=True)
    b.row([(a, 1.0), (c, 1.0)], lo=1.5, hi=1.7)
    assert solve_milp(b.mip()).status is Status.INFEASIBLE


def _random_mip(rng, n_bin, n_cont=4, m=5):
    A = rng.uniform(0, 1, (m, n_cont))
    B = rng.uniform(-0.5, 0.5, (m, n_bin))
    rhs = rng.uniform(3, 8, m)
    c = rng.uniform(-2, 1, n_cont)
    d = rng.uniform(-1, 1, n_bin)
    return A, B, rhs, c, d


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 8))
def test_milp_matches_enumeration(seed, n_bin):
    rng = np.random.default_rng(seed)
    A, B, rhs, c, d = _random_mip(rng, n_bin)
    best = np.inf
    for y in itertools.product((0, 1), repeat=n_bin):
        y = np.array(y, float)
        slack = rhs - B @ y
        if np.any(slack < 0):
            continue
        status, _, obj = simplex_leq(c, A, slack)
        assert status == "optimal"
        best = min(best, obj + d @ y)
    m, nc = A.shape
    full = np.hstack([A, B])
    lp = dense_lp(np.concatenate([c, d]), full, np.full(m, -INF), rhs, np.zeros(nc + n_bin),
                  np.concatenate([np.full(nc, INF), np.ones(n_bin)]))
    mask = np.array([False] * nc + [True] * n_bin)
    sol = solve_milp(MixedIntegerProgram(lp, mask))
    relax = solve_lp(lp)
    assert sol.status is Status.OPTIMAL
    assert sol.objective == pytest.approx(best, abs=1e-6 * max(1.0, abs(best)))
    assert relax.objective <= sol.best_bound + 1e-7 <= sol.objective + 2e-7 * max(1.0, abs(best))
    assert max_violation(lp, sol.x) <= 1e-7
    assert np.allclose(sol.x[mask], np.round(sol.x[mask]))


def test_qp_unconstrained():
    b = ModelBuilder()
    x = b.var("x", cost=-4.0)
    b.add_quad(x, x, 2.0)
    b.constant = 4.0
    sol = solve_qp(b.qp())
    assert sol.x[0] == pytest.approx(2.0, abs=1e-7) and sol.objective == pytest.approx(0.0, abs=1e-7)


def test_qp_bound_active():
    b = ModelBuilder()
    x = b.var("x", lb=1.0)
    b.add_quad(x, x, 2.0)
    sol = solve_qp(b.qp())
    assert sol.x[0] == pytest.approx(1.0, abs=1e-7)


def test_qp_rejects_indefinite():
    lp = dense_lp([0.0, 0.0], np.zeros((0, 2)), [], [], [-1.0, -1.0], [1.0, 1.0])
    with pytest.raises(DomainError):
        solve_qp(QuadraticProgram(lp, sp.csc_matrix(np.diag([1.0, -1.0]))))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(2, 6))
def test_qp_matches_active_set_oracle(seed, n):
    rng = np.random.default_rng(seed)
    M = rng.normal(size=(n, n))
    Q = M @ M.T + 0.1 * np.eye(n)
    c = rng.normal(size=n) * 3
    lb, ub = -rng.uniform(0.5, 2, n), rng.uniform(0.5, 2, n)
    m = 1 if n < 4 else 2
    Aeq = rng.normal(size=(m, n))
    x0 = rng.uniform(lb, ub)
    beq = Aeq @ x0
    ref_obj, ref_x = qp_box_eq(Q, c, Aeq, beq, lb, ub)
    lp = dense_lp(c, Aeq, beq, beq, lb, ub)
    sol = solve_qp(QuadraticProgram(lp, sp.csc_matrix(Q)))
    assert sol.status is Status.OPTIMAL
    assert sol.objective == pytest.approx(ref_obj, abs=1e-6 * max(1.0, abs(ref_obj)))
    assert np.allclose(sol.x, ref_x, atol=1e-5)  # strictly convex: unique minimizer
    assert sol.kkt_residual is not None and sol.kkt_residual <= 1e-6


def test_lp_text_dump():
    b = ModelBuilder()
    u = b.var("u", binary=True, cost=5.0)
    x = b.var("x", 0.0, 10.0, cost=-1.0)
    b.row([(x, 1.0), (u, -10.0)], hi=0.0, name="link")
    text = to_lp_text(b.mip())
    assert "Minimize" in text and "link_hi" in text and "Binaries" in text


def test_lp_text_round_trips_through_highs(tmp_path):
    highspy = pytest.importorskip("highspy")
    rng = np.random.default_rng(3)
    A = rng.uniform(0.1, 1, (4, 5))
    lp = dense_lp(rng.uniform(-1, 1, 5), A, np.full(4, -INF), rng.uniform(1, 5, 4), np.zeros(5), np.full(5, 3.0))
    p = tmp_path / "m.lp"
    write_lp(lp, p)
    h = highspy.Highs()
    h.setOptionValue("output_flag", False)
    h.readModel(str(p))
    h.run()
    assert h.getInfo().objective_function_value == pytest.approx(solve_lp(lp).objective, abs=1e-6)
