"""LP solves through the HiGHS dual simplex."""

from __future__ import annotations

import highspy
import numpy as np

from .problems import LinearProgram, Solution, Status

_HINF = highspy.kHighsInf


def _clip_inf(a: np.ndarray) -> np.ndarray:
    return np.clip(a, -_HINF, _HINF)


def _to_highs(lp: LinearProgram) -> highspy.HighsLp:
    A = lp.matrix().tocsc()
    A.sort_indices()
    h = highspy.HighsLp()
    h.num_col_ = lp.num_vars
    h.num_row_ = lp.num_rows
    h.col_cost_ = np.asarray(lp.c, dtype=float)
    h.col_lower_ = _clip_inf(lp.lb)
    h.col_upper_ = _clip_inf(lp.ub)
    h.row_lower_ = _clip_inf(lp.row_lower)
    h.row_upper_ = _clip_inf(lp.row_upper)
    h.offset_ = float(lp.constant)
    h.a_matrix_.format_ = highspy.MatrixFormat.kColwise
    h.a_matrix_.start_ = A.indptr.astype(np.int32)
    h.a_matrix_.index_ = A.indices.astype(np.int32)
    h.a_matrix_.value_ = A.data.astype(float)
    return h


def _run(lp: LinearProgram, tol: float, max_iter: int, presolve: bool = True):
    solver = highspy.Highs()
    solver.setOptionValue("output_flag", False)
    solver.setOptionValue("primal_feasibility_tolerance", tol)
    solver.setOptionValue("dual_feasibility_tolerance", tol)
    solver.setOptionValue("simplex_iteration_limit", int(max_iter))
    solver.setOptionValue("threads", 1)
    if not presolve:
        solver.setOptionValue("presolve", "off")
    solver.passModel(_to_highs(lp))
    solver.run()
    return solver, solver.getModelStatus()


def solve_lp(lp: LinearProgram, tol: float = 1e-7, max_iter: int = 100_000) -> Solution:
    """Solve ``lp`` to optimality or report infeasible / unbounded / iteration-limit."""
    lp.check()
    if lp.num_vars == 0:
        feasible = np.all(lp.row_lower <= tol) and np.all(lp.row_upper >= -tol)
        if not feasible:
            return Solution(Status.INFEASIBLE)
        return Solution(Status.OPTIMAL, np.zeros(0), lp.constant, np.zeros(lp.num_rows))

    solver, status = _run(lp, tol, max_iter)
    MS = highspy.HighsModelStatus
    if status == MS.kUnboundedOrInfeasible:
        # Presolve could not tell which; decide without it.
        solver, status = _run(lp, tol, max_iter, presolve=False)
    if status == MS.kUnboundedOrInfeasible:
        feas = LinearProgram(np.zeros(lp.num_vars), lp.rows, lp.cols, lp.vals, lp.row_lower,
                             lp.row_upper, lp.lb, lp.ub)
        _, phase1 = _run(feas, tol, max_iter)
        return Solution(Status.UNBOUNDED if phase1 == MS.kOptimal else Status.INFEASIBLE)
    if status == MS.kOptimal:
        sol = solver.getSolution()
        x = np.array(sol.col_value)
        return Solution(Status.OPTIMAL, x, lp.objective(x), np.array(sol.row_dual))
    if status == MS.kInfeasible:
        return Solution(Status.INFEASIBLE)
    if status in (MS.kUnbounded, MS.kUnboundedOrInfeasible):
        return Solution(Status.UNBOUNDED)
    return Solution(Status.ITERATION_LIMIT)
