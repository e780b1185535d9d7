"""Centralized transmission-expansion benchmark and brute-force planning oracle.

The benchmark is one MILP over all regions: convex piecewise-linear dispatch
cost weighted by scenario hours plus annualized investment, DC power flow,
and the big-M disjunction that deactivates the flow-angle law of an unbuilt
candidate.  The oracle enumerates every build vector and solves the
product-form LP for each.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .dispatch import add_generator, node_demand, output
from .errors import DomainError
from .netmodel import CandidateLine, Network, validate
from .solver import ModelBuilder, MixedIntegerProgram, Solution, Status, solve_lp, solve_milp

MAX_BRUTE_FORCE = 16


def big_m(candidate: CandidateLine, net: Network) -> float:
    """Smallest M that makes the disjunction vacuous for an unbuilt line.

    With every angle in ``[-B, B]`` the angle term can reach ``2B`` times the
    susceptance, and the flow itself is bounded by the line capacity.
    """
    return 2.0 * net.angle_bound * net.susceptance(candidate.reactance) + candidate.capacity


@dataclass
class PlanResult:
    """Investment decisions, per-scenario operating point and cost split."""

    status: str
    build: dict[str, int] = field(default_factory=dict)
    dispatch: dict[str, dict[str, float]] = field(default_factory=dict)
    flows: dict[str, dict[str, float]] = field(default_factory=dict)
    candidate_flows: dict[str, dict[str, float]] = field(default_factory=dict)
    angles: dict[str, dict[str, float]] = field(default_factory=dict)
    objective: float | None = None
    operational_cost: float | None = None
    investment_cost: float | None = None

    @property
    def feasible(self) -> bool:
        return self.status == Status.OPTIMAL.value

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "build": dict(self.build),
            "objective": self.objective,
            "operational_cost": self.operational_cost,
            "investment_cost": self.investment_cost,
            "dispatch": self.dispatch,
            "flows": self.flows,
            "candidate_flows": self.candidate_flows,
            "angles": self.angles,
        }


class _Model:
    """Index bookkeeping for one network-wide DC model."""

    def __init__(self, net: Network):
        self.net = net
        self.b = ModelBuilder()
        self.segs: dict[tuple[str, str], list[int]] = {}
        self.theta: dict[tuple[str, str], int] = {}
        self.pf: dict[tuple[str, str], int] = {}
        self.pk: dict[tuple[str, str], int] = {}
        self.u: dict[str, int] = {}


def _build(net: Network, fixed_u: dict[str, int] | None) -> _Model:
    """Network-wide model; big-M with binary u when ``fixed_u`` is None, else product form."""
    m = _Model(net)
    b = m.b
    B = net.angle_bound
    ref = net.reference_node

    for k in net.candidate_lines:
        if fixed_u is None:
            m.u[k.id] = b.var(f"u[{k.id}]", binary=True, cost=net.annualized_cost(k))
        elif fixed_u.get(k.id, 0):
            b.constant += net.annualized_cost(k)

    for s in net.scenarios:
        for n in net.nodes:
            lim = 0.0 if n.id == ref else B
            m.theta[s.id, n.id] = b.var(f"theta[{s.id},{n.id}]", -lim, lim)
        for g in net.generators:
            m.segs[s.id, g.id] = add_generator(b, net, g, s)
        for h in net.existing_lines:
            j = m.pf[s.id, h.id] = b.var(f"p[{s.id},{h.id}]", -h.capacity, h.capacity)
            bsus = net.susceptance(h.reactance)
            b.eq([(j, 1.0), (m.theta[s.id, h.from_node], -bsus), (m.theta[s.id, h.to_node], bsus)], 0.0,
                 f"flow[{s.id},{h.id}]")
        for k in net.candidate_lines:
            bsus = net.susceptance(k.reactance)
            ti, tj = m.theta[s.id, k.from_node], m.theta[s.id, k.to_node]
            if fixed_u is None:
                j = m.pk[s.id, k.id] = b.var(f"pk[{s.id},{k.id}]", -k.capacity, k.capacity)
                M = big_m(k, net)
                u = m.u[k.id]
                law = [(j, 1.0), (ti, -bsus), (tj, bsus)]
                b.row(law + [(u, M)], hi=M, name=f"bigm_hi[{s.id},{k.id}]")
                b.row(law + [(u, -M)], lo=-M, name=f"bigm_lo[{s.id},{k.id}]")
                b.row([(j, 1.0), (u, -k.capacity)], hi=0.0, name=f"cap_hi[{s.id},{k.id}]")
                b.row([(j, 1.0), (u, k.capacity)], lo=0.0, name=f"cap_lo[{s.id},{k.id}]")
            elif fixed_u.get(k.id, 0):
                j = m.pk[s.id, k.id] = b.var(f"pk[{s.id},{k.id}]", -k.capacity, k.capacity)
                b.eq([(j, 1.0), (ti, -bsus), (tj, bsus)], 0.0, f"flow[{s.id},{k.id}]")
            else:
                m.pk[s.id, k.id] = b.var(f"pk[{s.id},{k.id}]", 0.0, 0.0)

        demand = node_demand(net, s)
        terms: dict[str, list] = {n.id: [] for n in net.nodes}
        for g in net.generators:
            terms[g.node] += [(j, 1.0) for j in m.segs[s.id, g.id]]
        for h in net.existing_lines:
            terms[h.from_node].append((m.pf[s.id, h.id], -1.0))
            terms[h.to_node].append((m.pf[s.id, h.id], 1.0))
        for k in net.candidate_lines:
            terms[k.from_node].append((m.pk[s.id, k.id], -1.0))
            terms[k.to_node].append((m.pk[s.id, k.id], 1.0))
        for n in net.nodes:
            b.eq(terms[n.id], demand[n.id], f"balance[{s.id},{n.id}]")
    return m


def build_centralized(net: Network) -> MixedIntegerProgram:
    """Big-M MILP of the whole system (one binary per candidate line)."""
    _require_valid(net)
    return _build(net, None).b.mip()


def build_fixed_u(net: Network, u: dict[str, int]):
    """Product-form LP with the build vector ``u`` fixed (unbuilt lines carry no flow)."""
    _require_valid(net)
    return _build(net, dict(u)).b.lp()


def _require_valid(net: Network) -> None:
    rep = validate(net)
    if rep.violations:
        first = rep.violations[0]
        raise DomainError(first.message, first.path)


def _extract(m: _Model, sol: Solution, build: dict[str, int]) -> PlanResult:
    net, x = m.net, sol.x
    plan = PlanResult(status=Status.OPTIMAL.value, build=dict(build))
    for s in net.scenarios:
        plan.dispatch[s.id] = {g.id: output(x, m.segs[s.id, g.id]) for g in net.generators}
        plan.flows[s.id] = {h.id: float(x[m.pf[s.id, h.id]]) for h in net.existing_lines}
        plan.candidate_flows[s.id] = {k.id: float(x[m.pk[s.id, k.id]]) for k in net.candidate_lines}
        plan.angles[s.id] = {n.id: float(x[m.theta[s.id, n.id]]) for n in net.nodes}
    plan.operational_cost = operational_cost(net, plan.dispatch)
    plan.investment_cost = investment_cost(net, build)
    plan.objective = plan.operational_cost + plan.investment_cost
    return plan


def operational_cost(net: Network, dispatch: dict[str, dict[str, float]]) -> float:
    """Expected operating cost: scenario-weighted generation cost."""
    return sum(s.weight * g.cost(dispatch[s.id][g.id]) for s in net.scenarios for g in net.generators)


def investment_cost(net: Network, build: dict[str, int]) -> float:
    return sum(net.annualized_cost(k) for k in net.candidate_lines if build.get(k.id, 0))


def verify_plan(net: Network, plan: PlanResult, tol: float = 1e-5) -> None:
    """Raise AssertionError if ``plan`` breaks balance, limit or flow-law invariants.

    Tolerances are relative to ``max(1, |value|)``.
    """
    def close(a, b):
        return abs(a - b) <= tol * max(1.0, abs(a), abs(b))

    cand = {k.id: k for k in net.candidate_lines}
    for s in net.scenarios:
        d = node_demand(net, s)
        inj = {n.id: -d[n.id] for n in net.nodes}
        for g in net.generators:
            inj[g.node] += plan.dispatch[s.id][g.id]
            lo, hi = net.gen_limits(g, s)
            p = plan.dispatch[s.id][g.id]
            assert lo - tol * max(1, hi) <= p <= hi + tol * max(1, hi), f"generator {g.id} outside limits"
        th = plan.angles[s.id]
        for h in net.existing_lines:
            f = plan.flows[s.id][h.id]
            inj[h.from_node] -= f
            inj[h.to_node] += f
            assert abs(f) <= h.capacity * (1 + tol) + tol, f"line {h.id} overloaded"
            assert close(f, net.susceptance(h.reactance) * (th[h.from_node] - th[h.to_node])), f"flow law {h.id}"
        for kid, f in plan.candidate_flows[s.id].items():
            k = cand[kid]
            inj[k.from_node] -= f
            inj[k.to_node] += f
            assert abs(f) <= plan.build.get(kid, 0) * k.capacity * (1 + tol) + tol, f"candidate {kid} overloaded"
            if plan.build.get(kid, 0):
                assert close(f, net.susceptance(k.reactance) * (th[k.from_node] - th[k.to_node])), f"flow law {kid}"
        scale = max(1.0, sum(d.values()))
        for n, v in inj.items():
            assert abs(v) <= tol * scale, f"node {n} unbalanced by {v}"
        assert abs(sum(inj.values())) <= tol * scale


def solve_centralized(net: Network, rel_gap: float = 1e-6) -> PlanResult:
    """Solve the big-M benchmark MILP; invariants are checked before returning."""
    _require_valid(net)
    m = _build(net, None)
    sol = solve_milp(m.b.mip(), rel_gap=rel_gap)
    if not sol.optimal:
        return PlanResult(status=sol.status.value)
    build = {k.id: int(round(sol.x[m.u[k.id]])) for k in net.candidate_lines}
    plan = _extract(m, sol, build)
    verify_plan(net, plan)
    return plan


def fixed_u_dcopf(net: Network, u: dict[str, int]) -> PlanResult:
    """Centralized DC-OPF LP with the build decisions held at ``u``."""
    _require_valid(net)
    build = {k.id: int(bool(u.get(k.id, 0))) for k in net.candidate_lines}
    m = _build(net, build)
    sol = solve_lp(m.b.lp())
    if not sol.optimal:
        return PlanResult(status=sol.status.value, build=build)
    plan = _extract(m, sol, build)
    verify_plan(net, plan)
    return plan


def brute_force_plan(net: Network) -> PlanResult:
    """Enumerate all 2^K build vectors and keep the cheapest fixed-u plan."""
    K = len(net.candidate_lines)
    if K > MAX_BRUTE_FORCE:
        raise DomainError(f"brute force limited to {MAX_BRUTE_FORCE} candidates, got {K}", "candidate_lines")
    best: PlanResult | None = None
    for bits in itertools.product((0, 1), repeat=K):
        u = {k.id: bit for k, bit in zip(net.candidate_lines, bits)}
        plan = fixed_u_dcopf(net, u)
        if plan.feasible and (best is None or plan.objective < best.objective - 1e-9 * max(1.0, abs(best.objective))):
            best = plan
    return best if best is not None else PlanResult(status=Status.INFEASIBLE.value)


def build_vector(net: Network, plan: PlanResult) -> np.ndarray:
    return np.array([plan.build.get(k.id, 0) for k in net.candidate_lines], dtype=int)


def nodal_prices(net: Network, u: dict[str, int]) -> dict[str, dict[str, float]]:
    """Locational marginal prices ($/MWh) of the fixed-u dispatch, per scenario and node.

    The balance-row dual is divided by the scenario weight, so prices are
    hourly even when costs are hour-weighted.
    """
    _require_valid(net)
    build = {k.id: int(bool(u.get(k.id, 0))) for k in net.candidate_lines}
    m = _build(net, build)
    lp = m.b.lp()
    sol = solve_lp(lp)
    if not sol.optimal:
        raise DomainError(f"fixed-u dispatch is {sol.status.value}", "u")
    row = {name: i for i, name in enumerate(lp.row_names)}
    return {s.id: {n.id: float(sol.row_duals[row[f"balance[{s.id},{n.id}]"]]) / s.weight for n in net.nodes}
            for s in net.scenarios}
