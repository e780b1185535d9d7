"""Best-first branch-and-bound for binary MILPs over LP relaxations.

Branching picks the most fractional binary (closest to 0.5), ties going to
the lowest variable index; nodes with equal bound are explored in creation
order, so runs are fully deterministic.
"""

from __future__ import annotations

import heapq
import itertools

import numpy as np

from .lp import solve_lp
from .problems import MixedIntegerProgram, Solution, Status

INT_TOL = 1e-6


def _gap(incumbent: float, bound: float) -> float:
    return (incumbent - bound) / max(1.0, abs(incumbent))


def _branch_var(x: np.ndarray, int_idx: np.ndarray) -> int | None:
    vals = x[int_idx]
    frac = np.abs(vals - np.round(vals))
    if frac.max(initial=0.0) <= INT_TOL:
        return None
    # argmax returns the first (lowest index) maximiser
    return int(int_idx[np.argmax(frac)])


def solve_milp(mip: MixedIntegerProgram, rel_gap: float = 1e-6, tol: float = 1e-7,
               max_nodes: int = 50_000) -> Solution:
    """Solve a binary MILP; the result is within ``rel_gap`` of the optimum.

    ``best_bound`` and ``gap`` report the proof state when the search stops.
    """
    mip.check()
    if rel_gap < 0:
        raise ValueError("rel_gap must be >= 0")
    lp = mip.lp
    int_idx = np.flatnonzero(mip.integer)
    counter = itertools.count()

    incumbent: np.ndarray | None = None
    inc_obj = np.inf

    def polish(lb, ub, x):
        # Re-solve with the binaries fixed to their rounded values so the
        # continuous part is exactly consistent with an integral point.
        lb, ub = lb.copy(), ub.copy()
        r = np.round(x[int_idx])
        lb[int_idx] = r
        ub[int_idx] = r
        sol = solve_lp(lp.with_bounds(lb, ub), tol)
        return sol if sol.optimal else None

    def evaluate(lb, ub):
        nonlocal incumbent, inc_obj
        sol = solve_lp(lp.with_bounds(lb, ub), tol)
        if sol.status is Status.UNBOUNDED:
            raise _Unbounded
        if not sol.optimal:
            return
        j = _branch_var(sol.x, int_idx)
        if j is None:
            pol = polish(lb, ub, sol.x)
            if pol is not None and pol.objective < inc_obj:
                incumbent, inc_obj = pol.x, pol.objective
            return
        if not np.isfinite(inc_obj) or _gap(inc_obj, sol.objective) > rel_gap:
            heapq.heappush(heap, (sol.objective, next(counter), lb, ub, sol.x, j))

    heap: list = []
    nodes = 0
    try:
        evaluate(lp.lb.copy(), lp.ub.copy())
        nodes = 1
        while heap:
            bound = heap[0][0]
            if np.isfinite(inc_obj) and _gap(inc_obj, bound) <= rel_gap:
                break
            if nodes >= max_nodes:
                return Solution(Status.ITERATION_LIMIT, incumbent, inc_obj, best_bound=bound,
                                gap=_gap(inc_obj, bound) if incumbent is not None else None, nodes=nodes)
            _, _, lb, ub, x, j = heapq.heappop(heap)
            for val in (0.0, 1.0):
                clb, cub = lb.copy(), ub.copy()
                clb[j] = cub[j] = val
                evaluate(clb, cub)
                nodes += 1
    except _Unbounded:
        return Solution(Status.UNBOUNDED, nodes=nodes)

    if incumbent is None:
        return Solution(Status.INFEASIBLE, nodes=nodes)
    bound = min(heap[0][0], inc_obj) if heap else inc_obj
    return Solution(Status.OPTIMAL, incumbent, inc_obj, best_bound=bound, gap=_gap(inc_obj, bound), nodes=nodes)


class _Unbounded(Exception):
    pass
