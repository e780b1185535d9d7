"""Human-readable dump of problem instances in CPLEX LP text format."""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np

from .problems import LinearProgram, MixedIntegerProgram, QuadraticProgram

_BAD = re.compile(r"[^A-Za-z0-9_.\[\]]")


def _name(names: list[str], j: int, prefix: str = "x") -> str:
    raw = names[j] if j < len(names) and names[j] else f"{prefix}{j}"
    return _BAD.sub("_", raw)


def _num(v: float) -> str:
    return f"{v:.12g}"


def _terms(pairs) -> str:
    out = []
    for coef, name in pairs:
        sign = "-" if coef < 0 else "+"
        out.append(f"{sign} {_num(abs(coef))} {name}")
    text = " ".join(out) or "0 x0"
    return text[2:] if text.startswith("+ ") else text


def to_lp_text(problem: LinearProgram | MixedIntegerProgram | QuadraticProgram) -> str:
    lp = problem.lp if isinstance(problem, (MixedIntegerProgram, QuadraticProgram)) else problem
    names = [_name(lp.names, j) for j in range(lp.num_vars)]
    lines = ["\\ generated by gridcoord", "Minimize"]
    obj = _terms((c, names[j]) for j, c in enumerate(lp.c) if c != 0)
    if isinstance(problem, QuadraticProgram) and problem.Q.nnz:
        Q = problem.Q.tocoo()
        # the bracket holds x'Qx, so off-diagonal pairs appear once with 2*Q_ij
        quad = [f"{_num(2 * v)} {names[i]} * {names[j]}" if i != j else f"{_num(v)} {names[i]} ^ 2"
                for i, j, v in zip(Q.row, Q.col, Q.data) if i <= j and v != 0]
        obj += " + [ " + " + ".join(quad) + " ] / 2"
    lines.append(f" obj: {obj}")
    lines.append("Subject To")
    A = lp.matrix().tocsr()
    for r in range(lp.num_rows):
        row = A.getrow(r)
        expr = _terms((v, names[j]) for j, v in zip(row.indices, row.data))
        rn = _name(lp.row_names, r, "c")
        lo, hi = lp.row_lower[r], lp.row_upper[r]
        if lo == hi:
            lines.append(f" {rn}: {expr} = {_num(hi)}")
        else:
            if np.isfinite(lo):
                lines.append(f" {rn}_lo: {expr} >= {_num(lo)}")
            if np.isfinite(hi):
                lines.append(f" {rn}_hi: {expr} <= {_num(hi)}")
    lines.append("Bounds")
    for j in range(lp.num_vars):
        lo, hi = lp.lb[j], lp.ub[j]
        lo_s = _num(lo) if np.isfinite(lo) else "-inf"
        hi_s = _num(hi) if np.isfinite(hi) else "+inf"
        lines.append(f" {lo_s} <= {names[j]} <= {hi_s}")
    if isinstance(problem, MixedIntegerProgram) and problem.integer.any():
        lines.append("Binaries")
        lines.append(" " + " ".join(names[j] for j in np.flatnonzero(problem.integer)))
    lines.append("End")
    return "\n".join(lines) + "\n"


def write_lp(problem, path: str | Path) -> None:
    Path(path).write_text(to_lp_text(problem))
