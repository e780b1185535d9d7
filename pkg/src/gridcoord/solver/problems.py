"""Solver-neutral problem and solution types.

Every problem is a minimization in row-bounded form::

    min  c'x (+ 1/2 x'Qx) + constant
    s.t. row_lower <= A x <= row_upper
         lb <= x <= ub

with ``A`` stored as sparse triplets.  Infinite bounds are ``+-inf``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from ..errors import DomainError

INF = float("inf")


class Status(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    ITERATION_LIMIT = "iteration-limit"


@dataclass
class LinearProgram:
    c: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray
    row_lower: np.ndarray
    row_upper: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    names: list[str] = field(default_factory=list)
    row_names: list[str] = field(default_factory=list)
    constant: float = 0.0

    @property
    def num_vars(self) -> int:
        return len(self.c)

    @property
    def num_rows(self) -> int:
        return len(self.row_lower)

    def matrix(self) -> sp.csr_matrix:
        return sp.csr_matrix((self.vals, (self.rows, self.cols)), shape=(self.num_rows, self.num_vars))

    def check(self) -> None:
        """Raise DomainError on inconsistent dimensions, bounds, or non-finite data."""
        n, m = self.num_vars, self.num_rows
        if not (len(self.lb) == len(self.ub) == n):
            raise DomainError("variable bound arrays do not match cost vector length")
        if len(self.row_upper) != m:
            raise DomainError("row bound arrays differ in length")
        if not (len(self.rows) == len(self.cols) == len(self.vals)):
            raise DomainError("triplet arrays differ in length")
        if len(self.rows) and (self.rows.max() >= m or self.cols.max() >= n or min(self.rows.min(), self.cols.min()) < 0):
            raise DomainError("triplet index out of range")
        if not (np.all(np.isfinite(self.c)) and np.all(np.isfinite(self.vals))):
            raise DomainError("cost vector and matrix entries must be finite")
        if np.any(self.lb > self.ub) or np.any(self.row_lower > self.row_upper):
            raise DomainError("a lower bound exceeds its upper bound")

    def objective(self, x: np.ndarray) -> float:
        return float(self.c @ x) + self.constant

    def with_bounds(self, lb: np.ndarray, ub: np.ndarray) -> "LinearProgram":
        return LinearProgram(self.c, self.rows, self.cols, self.vals, self.row_lower, self.row_upper,
                             lb, ub, self.names, self.row_names, self.constant)

    def scaled(self, factor: float) -> "LinearProgram":
        return LinearProgram(self.c * factor, self.rows, self.cols, self.vals, self.row_lower,
                             self.row_upper, self.lb, self.ub, self.names, self.row_names,
                             self.constant * factor)


@dataclass
class MixedIntegerProgram:
    """A LinearProgram whose ``integer`` mask marks binary variables."""

    lp: LinearProgram
    integer: np.ndarray

    def check(self) -> None:
        self.lp.check()
        if len(self.integer) != self.lp.num_vars:
            raise DomainError("integrality mask length differs from number of variables")
        ints = self.integer.astype(bool)
        if np.any(self.lp.lb[ints] < 0) or np.any(self.lp.ub[ints] > 1):
            raise DomainError("integral variables must be binary (bounds within [0, 1])")

    def relaxation(self) -> LinearProgram:
        return self.lp


@dataclass
class QuadraticProgram:
    """A LinearProgram plus the PSD quadratic term ``1/2 x'Qx``."""

    lp: LinearProgram
    Q: sp.csc_matrix

    def check(self) -> None:
        self.lp.check()
        n = self.lp.num_vars
        if self.Q.shape != (n, n):
            raise DomainError("Q shape does not match the number of variables")
        dense = self.Q.toarray()
        scale = max(1.0, float(np.abs(dense).max(initial=0.0)))
        if np.abs(dense - dense.T).max(initial=0.0) > 1e-12 * scale:
            raise DomainError("Q must be symmetric")
        if n:
            try:
                np.linalg.cholesky(dense + 1e-10 * scale * np.eye(n))
            except np.linalg.LinAlgError:
                raise DomainError("Q must be positive semidefinite") from None

    def objective(self, x: np.ndarray) -> float:
        return self.lp.objective(x) + 0.5 * float(x @ (self.Q @ x))


@dataclass
class Solution:
    status: Status
    x: np.ndarray | None = None
    objective: float = float("nan")
    row_duals: np.ndarray | None = None
    best_bound: float | None = None
    gap: float | None = None
    nodes: int = 0
    kkt_residual: float | None = None

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL


def max_violation(lp: LinearProgram, x: np.ndarray) -> float:
    """Largest bound or row violation of ``x``; computed independently of any solver."""
    viol = 0.0
    if lp.num_vars:
        viol = max(viol, float(np.max(lp.lb - x, initial=0.0)), float(np.max(x - lp.ub, initial=0.0)))
    if lp.num_rows:
        ax = np.zeros(lp.num_rows)
        np.add.at(ax, lp.rows, lp.vals * x[lp.cols])
        viol = max(viol, float(np.max(lp.row_lower - ax, initial=0.0)), float(np.max(ax - lp.row_upper, initial=0.0)))
    return viol


class ModelBuilder:
    """Incremental construction of LP / MILP / QP instances by named variables."""

    def __init__(self) -> None:
        self.names: list[str] = []
        self.lb: list[float] = []
        self.ub: list[float] = []
        self.cost: list[float] = []
        self.binary: list[bool] = []
        self.row_lower: list[float] = []
        self.row_upper: list[float] = []
        self.row_names: list[str] = []
        self._r: list[int] = []
        self._c: list[int] = []
        self._v: list[float] = []
        self._q: dict[tuple[int, int], float] = {}
        self.constant = 0.0
        self.index: dict[str, int] = {}

    def var(self, name: str, lb: float = -INF, ub: float = INF, cost: float = 0.0, binary: bool = False) -> int:
        if name in self.index:
            raise KeyError(f"duplicate variable {name!r}")
        j = len(self.names)
        self.index[name] = j
        self.names.append(name)
        self.lb.append(0.0 if binary else lb)
        self.ub.append(1.0 if binary else ub)
        self.cost.append(cost)
        self.binary.append(binary)
        return j

    def add_cost(self, j: int, c: float) -> None:
        self.cost[j] += c

    def add_quad(self, i: int, j: int, v: float) -> None:
        """Add ``v`` to Q[i, j] (and Q[j, i] when off-diagonal)."""
        self._q[(i, j)] = self._q.get((i, j), 0.0) + v
        if i != j:
            self._q[(j, i)] = self._q.get((j, i), 0.0) + v

    def row(self, terms, lo: float = -INF, hi: float = INF, name: str = "") -> int:
        r = len(self.row_lower)
        for j, a in terms:
            if a != 0.0:
                self._r.append(r)
                self._c.append(j)
                self._v.append(float(a))
        self.row_lower.append(lo)
        self.row_upper.append(hi)
        self.row_names.append(name)
        return r

    def eq(self, terms, rhs: float, name: str = "") -> int:
        return self.row(terms, rhs, rhs, name)

    def lp(self) -> LinearProgram:
        return LinearProgram(
            c=np.array(self.cost, dtype=float),
            rows=np.array(self._r, dtype=np.int64), cols=np.array(self._c, dtype=np.int64),
            vals=np.array(self._v, dtype=float),
            row_lower=np.array(self.row_lower, dtype=float), row_upper=np.array(self.row_upper, dtype=float),
            lb=np.array(self.lb, dtype=float), ub=np.array(self.ub, dtype=float),
            names=list(self.names), row_names=list(self.row_names), constant=self.constant,
        )

    def mip(self) -> MixedIntegerProgram:
        return MixedIntegerProgram(self.lp(), np.array(self.binary, dtype=bool))

    def qp(self) -> QuadraticProgram:
        n = len(self.names)
        if self._q:
            keys = list(self._q)
            Q = sp.csc_matrix(([self._q[k] for k in keys], ([k[0] for k in keys], [k[1] for k in keys])), shape=(n, n))
        else:
            Q = sp.csc_matrix((n, n))
        return QuadraticProgram(self.lp(), Q)
