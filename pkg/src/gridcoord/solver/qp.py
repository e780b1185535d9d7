"""Convex QP solves through the Clarabel interior-point solver."""

from __future__ import annotations

import clarabel
import numpy as np
import scipy.sparse as sp

from .problems import QuadraticProgram, Solution, Status, max_violation


def _conic_form(qp: QuadraticProgram):
    """Rewrite row and variable bounds as ``A x + s = b`` with s in {0} x R+."""
    lp = qp.lp
    n = lp.num_vars
    M = lp.matrix().tocsr()
    I = sp.identity(n, format="csr")
    eq = np.flatnonzero(lp.row_lower == lp.row_upper)
    up = np.flatnonzero(np.isfinite(lp.row_upper) & (lp.row_lower != lp.row_upper))
    lo = np.flatnonzero(np.isfinite(lp.row_lower) & (lp.row_lower != lp.row_upper))
    vub = np.flatnonzero(np.isfinite(lp.ub))
    vlb = np.flatnonzero(np.isfinite(lp.lb))
    blocks = [M[eq], M[up], -M[lo], I[vub], -I[vlb]]
    rhs = [lp.row_upper[eq], lp.row_upper[up], -lp.row_lower[lo], lp.ub[vub], -lp.lb[vlb]]
    A = sp.vstack(blocks, format="csc") if any(b.shape[0] for b in blocks) else sp.csc_matrix((0, n))
    b = np.concatenate(rhs) if rhs else np.zeros(0)
    cones = []
    if len(eq):
        cones.append(clarabel.ZeroConeT(len(eq)))
    n_ineq = A.shape[0] - len(eq)
    if n_ineq:
        cones.append(clarabel.NonnegativeConeT(n_ineq))
    return A, b, cones


def solve_qp(qp: QuadraticProgram, tol: float = 1e-8, max_iter: int = 200, check: bool = True) -> Solution:
    """Minimise ``1/2 x'Qx + c'x`` over the polyhedron of ``qp.lp``.

    ``kkt_residual`` on the result is the worst of primal violation,
    stationarity ``||Qx + c + A'z||_inf`` and complementarity ``|s'z|``,
    each relative to the data scale.
    """
    if check:
        qp.check()
    lp = qp.lp
    n = lp.num_vars
    if n == 0:
        return Solution(Status.OPTIMAL, np.zeros(0), lp.constant, kkt_residual=0.0)
    A, b, cones = _conic_form(qp)
    P = sp.triu(qp.Q, format="csc")
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.max_iter = max_iter
    settings.tol_gap_abs = tol
    settings.tol_gap_rel = tol
    settings.tol_feas = tol
    settings.tol_ktratio = 1e-7
    res = clarabel.DefaultSolver(P, np.asarray(lp.c, dtype=float), A, b, cones, settings).solve()

    S = clarabel.SolverStatus
    if res.status in (S.Solved, S.AlmostSolved):
        x = np.array(res.x)
        z = np.array(res.z)
        s = np.array(res.s)
        scale = 1.0 + max(np.abs(lp.c).max(initial=0.0), np.abs(b).max(initial=0.0))
        stationarity = np.abs(qp.Q @ x + lp.c + A.T @ z).max(initial=0.0)
        kkt = max(max_violation(lp, x), stationarity / scale, abs(float(s @ z)) / scale)
        return Solution(Status.OPTIMAL, x, qp.objective(x), row_duals=z, kkt_residual=kkt)
    if res.status in (S.PrimalInfeasible, S.AlmostPrimalInfeasible):
        return Solution(Status.INFEASIBLE)
    if res.status in (S.DualInfeasible, S.AlmostDualInfeasible):
        return Solution(Status.UNBOUNDED)
    return Solution(Status.ITERATION_LIMIT)
