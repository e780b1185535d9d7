"""Solver-neutral LP / MILP / QP types and reference solvers."""

from .lp import solve_lp
from .lpformat import to_lp_text, write_lp
from .milp import solve_milp
from .problems import (
    INF,
    LinearProgram,
    MixedIntegerProgram,
    ModelBuilder,
    QuadraticProgram,
    Solution,
    Status,
    max_violation,
)
from .qp import solve_qp

__all__ = [
    "INF", "LinearProgram", "MixedIntegerProgram", "ModelBuilder", "QuadraticProgram",
    "Solution", "Status", "max_violation", "solve_lp", "solve_milp", "solve_qp",
    "to_lp_text", "write_lp",
]
