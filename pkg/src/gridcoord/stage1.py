"""Stage I: region-decomposed Lagrangian dual of the expansion MILP.

Every region (TP) solves its own expansion MILP with copies of the shared
quantities -- build decisions, flows on shared and candidate lines, and the
angles at their endpoints.  The coordinator (TPC) holds one global copy of
each and solves its own small MILP.  Non-anticipativity between copies is
priced by multipliers: ``pi`` on build decisions, ``mu`` on flows and ``xi``
on endpoint angles.  The coordinator moves every multiplier by the
disagreement between the region copy and the global copy with a diminishing
step ``alpha0 / (1 + nu / nu0) / beta``.

Element keys are ``(kind, id)`` with kind ``"k"`` for candidate lines and
``"h"`` for shared existing lines; angle ends are ``"i"`` (sending) and
``"j"`` (receiving).

Angle copies are priced in base-scaled units ``base_mva * theta`` (MW times
per-unit reactance), so ``xi`` is in $ per scaled unit and the step schedule
behaves the same whatever power base a case uses.  With the default
``base_mva = 1`` this is the plain radian form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .centralized import PlanResult, big_m, fixed_u_dcopf
from .config import Stage1Config
from .dispatch import add_generator, node_demand, output
from .errors import DomainError, SolverError
from .netmodel import CandidateLine, ExistingLine, Network
from .solver import ModelBuilder, Status, solve_lp, solve_milp

Line = CandidateLine | ExistingLine
ENDS = ("i", "j")


def _end_node(line: Line, end: str) -> str:
    return line.from_node if end == "i" else line.to_node


class Layout:
    """Which lines, nodes and multipliers each region and the coordinator hold."""

    def __init__(self, net: Network):
        self.net = net
        self.candidates: dict[str, list[CandidateLine]] = {}
        self.shared: dict[str, list[ExistingLine]] = {}
        self.internal: dict[str, list[ExistingLine]] = {}
        self.nodes: dict[str, list[str]] = {}
        for z in net.regions:
            own = set(net.region_nodes(z))
            self.candidates[z] = [k for k in net.candidate_lines if z in net.stakeholders(k)]
            self.shared[z] = [h for h in net.shared_existing if z in net.stakeholders(h)]
            self.internal[z] = [h for h in net.existing_lines
                                if h.from_node in own and h.to_node in own]
            extra = {n for l in (*self.candidates[z], *self.shared[z]) for n in (l.from_node, l.to_node)}
            self.nodes[z] = [n.id for n in net.nodes if n.id in own or n.id in extra]
        coupled = {n for l in (*net.candidate_lines, *net.shared_existing) for n in (l.from_node, l.to_node)}
        self.tpc_nodes = [n.id for n in net.nodes if n.id in coupled]
        self.lines: dict[tuple[str, str], Line] = {("k", k.id): k for k in net.candidate_lines}
        self.lines.update({("h", h.id): h for h in net.shared_existing})
        self.angle_scale = net.base_mva

    def elements(self, z: str) -> list[tuple[str, str]]:
        return [("k", k.id) for k in self.candidates[z]] + [("h", h.id) for h in self.shared[z]]

    def share(self, k: CandidateLine) -> float:
        """Fraction of a candidate's cost borne by each stakeholder (equal split)."""
        return 1.0 / len(self.net.stakeholders(k))


# -- multipliers and copies --------------------------------------------------


@dataclass
class DualSet:
    """Multipliers of one region: pi[k], mu[(s, kind, id)], xi[(s, kind, id, end)]."""

    pi: dict[str, float] = field(default_factory=dict)
    mu: dict[tuple[str, str, str], float] = field(default_factory=dict)
    xi: dict[tuple[str, str, str, str], float] = field(default_factory=dict)

    @classmethod
    def zeros(cls, layout: Layout, z: str) -> "DualSet":
        d = cls()
        for k in layout.candidates[z]:
            d.pi[k.id] = 0.0
        for s in layout.net.scenarios:
            for kind, eid in layout.elements(z):
                d.mu[s.id, kind, eid] = 0.0
                for end in ENDS:
                    d.xi[s.id, kind, eid, end] = 0.0
        return d

    def copy(self) -> "DualSet":
        return DualSet(dict(self.pi), dict(self.mu), dict(self.xi))

    def norms(self) -> dict[str, float]:
        def n2(d):
            return math.sqrt(sum(v * v for v in d.values()))
        return {"pi": n2(self.pi), "mu": n2(self.mu), "xi": n2(self.xi)}


@dataclass
class RegionalProposal:
    """Optimizers of one regional subproblem."""

    region: str
    u: dict[str, int]
    flows: dict[tuple[str, str, str], float]
    angles: dict[tuple[str, str, str, str], float]
    dispatch: dict[str, dict[str, float]]
    objective: float
    cost: float
    round: int = 0
    bound: float = -math.inf


@dataclass
class GlobalCopies:
    """Coordinator copies: u[k], flows[(s, kind, id)], phi[(s, node)]."""

    u: dict[str, int] = field(default_factory=dict)
    flows: dict[tuple[str, str, str], float] = field(default_factory=dict)
    phi: dict[tuple[str, str], float] = field(default_factory=dict)
    objective: float = 0.0
    bound: float = -math.inf

    def angle(self, layout: Layout, s: str, kind: str, eid: str, end: str) -> float:
        return self.phi[s, _end_node(layout.lines[kind, eid], end)]


# -- subproblem construction -----------------------------------------------


class _Index:
    def __init__(self):
        self.u: dict[str, int] = {}
        self.theta: dict[tuple[str, str], int] = {}
        self.flow: dict[tuple[str, str, str], int] = {}
        self.segs: dict[tuple[str, str], list[int]] = {}


def _add_abs(b: ModelBuilder, f: int, bound: float, name: str, relax: bool) -> int:
    """Exact ``t = |f|`` for ``|f| <= bound`` using one binary sign indicator."""
    t = b.var(f"abs[{name}]", 0.0, bound)
    sgn = b.var(f"sgn[{name}]", 0.0, 1.0, binary=not relax)
    b.row([(t, 1.0), (f, -1.0)], lo=0.0)
    b.row([(t, 1.0), (f, 1.0)], lo=0.0)
    b.row([(t, 1.0), (f, -1.0), (sgn, 2 * bound)], hi=2 * bound)
    b.row([(t, 1.0), (f, 1.0), (sgn, -2 * bound)], hi=0.0)
    return t


def _candidate_flow(b: ModelBuilder, net: Network, k: CandidateLine, s: str, u: int,
                    ti: int, tj: int, tag: str) -> int:
    f = b.var(f"{tag}pk[{s},{k.id}]", -k.capacity, k.capacity)
    M = big_m(k, net)
    bs = net.susceptance(k.reactance)
    law = [(f, 1.0), (ti, -bs), (tj, bs)]
    b.row(law + [(u, M)], hi=M, name=f"{tag}bigm_hi[{s},{k.id}]")
    b.row(law + [(u, -M)], lo=-M, name=f"{tag}bigm_lo[{s},{k.id}]")
    b.row([(f, 1.0), (u, -k.capacity)], hi=0.0, name=f"{tag}cap_hi[{s},{k.id}]")
    b.row([(f, 1.0), (u, k.capacity)], lo=0.0, name=f"{tag}cap_lo[{s},{k.id}]")
    return f


def _regional_model(layout: Layout, z: str, duals: DualSet, flow_mode: str = "signed",
                    relax: bool = False, fix: dict | None = None) -> tuple[ModelBuilder, _Index]:
    net = layout.net
    if z not in layout.candidates:
        raise DomainError(f"unknown region {z!r}", "region")
    b = ModelBuilder()
    idx = _Index()
    B = net.angle_bound
    own = set(net.region_nodes(z))

    for k in layout.candidates[z]:
        cost = layout.share(k) * net.annualized_cost(k) + duals.pi.get(k.id, 0.0)
        idx.u[k.id] = b.var(f"u[{k.id}]", 0.0, 1.0, cost, binary=not relax)

    for s in net.scenarios:
        for n in layout.nodes[z]:
            idx.theta[s.id, n] = b.var(f"theta[{s.id},{n}]", -B, B)
        for g in net.generators:
            if g.node in own:
                idx.segs[s.id, g.id] = add_generator(b, net, g, s)
        balance: dict[str, list] = {n: [] for n in own}
        for g in net.generators:
            if g.node in own:
                balance[g.node] += [(j, 1.0) for j in idx.segs[s.id, g.id]]

        def attach(line, f):
            if line.from_node in own:
                balance[line.from_node].append((f, -1.0))
            if line.to_node in own:
                balance[line.to_node].append((f, 1.0))

        for h in layout.internal[z]:
            f = b.var(f"p[{s.id},{h.id}]", -h.capacity, h.capacity)
            bs = net.susceptance(h.reactance)
            b.eq([(f, 1.0), (idx.theta[s.id, h.from_node], -bs), (idx.theta[s.id, h.to_node], bs)], 0.0)
            attach(h, f)
        for h in layout.shared[z]:
            f = b.var(f"p[{s.id},{h.id}]", -h.capacity, h.capacity)
            bs = net.susceptance(h.reactance)
            b.eq([(f, 1.0), (idx.theta[s.id, h.from_node], -bs), (idx.theta[s.id, h.to_node], bs)], 0.0)
            idx.flow[s.id, "h", h.id] = f
            attach(h, f)
        for k in layout.candidates[z]:
            f = _candidate_flow(b, net, k, s.id, idx.u[k.id], idx.theta[s.id, k.from_node],
                                idx.theta[s.id, k.to_node], "")
            idx.flow[s.id, "k", k.id] = f
            attach(k, f)

        for (kind, eid) in layout.elements(z):
            line = layout.lines[kind, eid]
            f = idx.flow[s.id, kind, eid]
            mu = duals.mu.get((s.id, kind, eid), 0.0)
            if flow_mode == "magnitude":
                t = _add_abs(b, f, line.capacity, f"{s.id},{kind},{eid}", relax)
                b.add_cost(t, mu)
            else:
                b.add_cost(f, mu)
            for end in ENDS:
                b.add_cost(idx.theta[s.id, _end_node(line, end)],
                           layout.angle_scale * duals.xi.get((s.id, kind, eid, end), 0.0))

        demand = node_demand(net, s)
        for n in layout.nodes[z]:
            if n in own:
                b.eq(balance[n], demand[n], f"balance[{s.id},{n}]")

    if fix:
        _apply_fix(b, idx, layout, fix)
    return b, idx


def _apply_fix(b: ModelBuilder, idx: _Index, layout: Layout, fix: dict) -> None:
    def pin(j, v):
        if b.lb[j] > v + 1e-9 or b.ub[j] < v - 1e-9:
            b.lb[j], b.ub[j] = 1.0, 0.0  # inconsistent -> infeasible
        else:
            b.lb[j] = b.ub[j] = v

    for kid, v in fix.get("u", {}).items():
        if kid in idx.u:
            pin(idx.u[kid], float(v))
    for key, v in fix.get("flows", {}).items():
        if key in idx.flow:
            pin(idx.flow[key], v)
    for (s, kind, eid, end), v in fix.get("angles", {}).items():
        node = _end_node(layout.lines[kind, eid], end)
        j = idx.theta.get((s, node))
        if j is not None:
            if b.lb[j] == b.ub[j] and abs(b.lb[j] - v) > 1e-9:
                b.lb[j], b.ub[j] = 1.0, 0.0
            else:
                pin(j, v)


def build_regional_subproblem(z: str, duals: DualSet, net: Network, flow_mode: str = "signed"):
    """MILP of region ``z`` under the multipliers ``duals``."""
    return _regional_model(Layout(net), z, duals, flow_mode)[0].mip()


def _tpc_model(layout: Layout, duals: dict[str, DualSet], relax: bool = False,
               fix: dict | None = None) -> tuple[ModelBuilder, _Index]:
    net = layout.net
    b = ModelBuilder()
    idx = _Index()
    B = net.angle_bound
    for k in net.candidate_lines:
        cost = -sum(duals[z].pi.get(k.id, 0.0) for z in net.stakeholders(k) if z in duals)
        idx.u[k.id] = b.var(f"u[{k.id}]", 0.0, 1.0, cost, binary=not relax)
    for s in net.scenarios:
        for n in layout.tpc_nodes:
            idx.theta[s.id, n] = b.var(f"phi[{s.id},{n}]", -B, B)
        for k in net.candidate_lines:
            idx.flow[s.id, "k", k.id] = _candidate_flow(
                b, net, k, s.id, idx.u[k.id], idx.theta[s.id, k.from_node], idx.theta[s.id, k.to_node], "g")
        for h in net.shared_existing:
            f = idx.flow[s.id, "h", h.id] = b.var(f"gp[{s.id},{h.id}]", -h.capacity, h.capacity)
            bs = net.susceptance(h.reactance)
            b.eq([(f, 1.0), (idx.theta[s.id, h.from_node], -bs), (idx.theta[s.id, h.to_node], bs)], 0.0)
        for z, d in duals.items():
            for (kind, eid) in layout.elements(z):
                line = layout.lines[kind, eid]
                b.add_cost(idx.flow[s.id, kind, eid], -d.mu.get((s.id, kind, eid), 0.0))
                for end in ENDS:
                    b.add_cost(idx.theta[s.id, _end_node(line, end)],
                               -layout.angle_scale * d.xi.get((s.id, kind, eid, end), 0.0))
    if fix:
        _apply_fix(b, idx, layout, fix)
    return b, idx


def build_tpc_subproblem(duals: dict[str, DualSet], net: Network):
    """Coordinator MILP over the global copies under all regions' multipliers."""
    return _tpc_model(Layout(net), duals)[0].mip()


# -- solves ------------------------------------------------------------------


def solve_regional(layout: Layout, z: str, duals: DualSet, cfg: Stage1Config, round_: int = 0) -> RegionalProposal:
    b, idx = _regional_model(layout, z, duals, cfg.flow_mode)
    sol = solve_milp(b.mip(), rel_gap=cfg.rel_gap)
    if not sol.optimal:
        raise SolverError(f"region {z} subproblem {sol.status.value} in round {round_}", sol.status.value)
    p = _proposal(layout, z, idx, sol.x, sol.objective, round_)
    p.bound = sol.best_bound
    return p


def _proposal(layout: Layout, z: str, idx: _Index, x: np.ndarray, objective: float, round_: int) -> RegionalProposal:
    net = layout.net
    u = {k: int(round(x[j])) for k, j in idx.u.items()}
    flows = {key: float(x[j]) for key, j in idx.flow.items()}
    angles = {}
    for s in net.scenarios:
        for kind, eid in layout.elements(z):
            for end in ENDS:
                angles[s.id, kind, eid, end] = float(x[idx.theta[s.id, _end_node(layout.lines[kind, eid], end)]])
    dispatch = {}
    for (s, g), segs in idx.segs.items():
        dispatch.setdefault(s, {})[g] = output(x, segs)
    cost = regional_cost(layout, z, u, dispatch)
    return RegionalProposal(z, u, flows, angles, dispatch, float(objective), cost, round_)


def regional_cost(layout: Layout, z: str, u: dict[str, int], dispatch: dict[str, dict[str, float]]) -> float:
    """Region's own cost: weighted generation cost plus its investment share."""
    net = layout.net
    gens = {g.id: g for g in net.generators}
    op = sum(s.weight * gens[g].cost(p) for s in net.scenarios for g, p in dispatch.get(s.id, {}).items())
    inv = sum(layout.share(k) * net.annualized_cost(k) for k in layout.candidates[z] if u.get(k.id, 0))
    return op + inv


def solve_tpc(layout: Layout, duals: dict[str, DualSet], cfg: Stage1Config) -> GlobalCopies:
    """Solve the coordinator MILP; among optimal build vectors prefer the fewest builds."""
    b, idx = _tpc_model(layout, duals)
    mip = b.mip()
    sol = solve_milp(mip, rel_gap=cfg.rel_gap)
    if not sol.optimal:
        raise SolverError(f"coordinator subproblem {sol.status.value}", sol.status.value)
    x = sol.x
    if any(round(x[j]) for j in idx.u.values()):
        f_star = sol.objective
        cost = b.cost[:]
        b.row(list(enumerate(cost)), hi=f_star - b.constant + 1e-7 * max(1.0, abs(f_star)), name="tpc_opt")
        b.cost = [0.0] * len(cost)
        for j in idx.u.values():
            b.cost[j] = 1.0
        tie = solve_milp(b.mip(), rel_gap=0.0)
        if tie.optimal:
            x = tie.x
        b.cost = cost
    obj = float(np.dot(b.cost[: len(x)], x)) + b.constant
    copies = GlobalCopies(objective=obj, bound=sol.best_bound)
    copies.u = {k: int(round(x[j])) for k, j in idx.u.items()}
    copies.flows = {key: float(x[j]) for key, j in idx.flow.items()}
    copies.phi = {key: float(x[j]) for key, j in idx.theta.items()}
    return copies


# -- state, updates and bounds -------------------------------------------------


@dataclass
class Stage1State:
    layout: Layout
    duals: dict[str, DualSet]
    copies: GlobalCopies | None = None
    proposals: dict[str, RegionalProposal] = field(default_factory=dict)
    nu: dict[str, int] = field(default_factory=dict)
    alpha0: float = 1.0
    nu0: float = 10.0
    beta: dict[str, float] = field(default_factory=dict)
    flow_mode: str = "signed"
    LB: float = -math.inf
    UB: float = math.inf
    UB_recovery: float = math.inf
    best_u: dict[str, int] | None = None
    best_plan: PlanResult | None = None
    consensus: bool = False
    trace: list[dict] = field(default_factory=list)
    round: int = 0
    rho: float = 1.0
    best_value: float = -math.inf
    stall: int = 0
    agree_streak: int = 0
    tpc_plan: PlanResult | None = None

    @classmethod
    def initial(cls, net: Network, cfg: Stage1Config) -> "Stage1State":
        layout = Layout(net)
        beta = cfg.beta if cfg.beta is not None else float(len(net.regions))
        return cls(
            layout=layout,
            duals={z: DualSet.zeros(layout, z) for z in net.regions},
            nu={z: 0 for z in net.regions},
            alpha0=cfg.alpha0, nu0=cfg.nu0, beta={z: beta for z in net.regions},
            flow_mode=cfg.flow_mode, rho=cfg.polyak_rho,
        )

    def step(self, z: str) -> float:
        """``alpha(nu(z)) / beta_z`` with the diminishing ``alpha0 / (1 + nu / nu0)``."""
        return self.alpha0 / (1.0 + self.nu[z] / self.nu0) / self.beta[z]

    @property
    def gap(self) -> float:
        if not (math.isfinite(self.UB) and math.isfinite(self.LB)) or self.UB == 0:
            return math.inf
        return 1.0 - self.LB / self.UB


def residuals(state: Stage1State, p: RegionalProposal, copies: GlobalCopies) -> DualSet:
    """Copy disagreements of one region, laid out like its multipliers."""
    layout = state.layout
    d = state.duals[p.region]
    g = DualSet()
    for kid in d.pi:
        g.pi[kid] = float(p.u[kid] - copies.u[kid])
    for key in d.mu:
        f = abs(p.flows[key]) if state.flow_mode == "magnitude" else p.flows[key]
        g.mu[key] = f - copies.flows[key]
    for key in d.xi:
        s, kind, eid, end = key
        g.xi[key] = layout.angle_scale * (p.angles[key] - copies.angle(layout, s, kind, eid, end))
    return g


@dataclass
class StepWeights:
    """Per-block scaling of a common step.

    ``pi[k]`` is ``capacity_k**2``: a build residual of 1 stands for
    ``capacity`` MW of transfer, which puts build multipliers on the same
    footing as flow multipliers.  ``xi`` damps the angle multipliers; the
    flow multipliers already price angle differences, and the angle block
    mostly carries the unpriced common shift of each agent's angles.
    """

    pi: dict[str, float]
    xi: float = 1.0

    @classmethod
    def scaled(cls, layout: Layout, xi: float) -> "StepWeights":
        return cls({k.id: k.capacity ** 2 for k in layout.net.candidate_lines}, xi)


def polyak_steps(state: Stage1State, proposals: dict[str, RegionalProposal], copies: GlobalCopies,
                 regions: list[str], rho: float, overshoot: float = 0.0,
                 weights: StepWeights | None = None) -> dict[str, float] | None:
    """Steps ``rho * (target - L) / ||g||_W^2`` with ``target = UB + overshoot * |UB|``.

    ``L`` is the Lagrangian value of the current subproblem optima and the
    norm uses the same block ``weights`` as the update.  The norm runs over
    every region's latest residual, not only the ``regions`` being updated:
    in an asynchronous round the participants alone may show a near-zero
    residual, which would blow the step up.  A small
    positive ``overshoot`` keeps the step alive when ``L`` already matches
    ``UB`` but the copies still disagree (ties at the dual optimum).  Returns
    None when no finite upper bound is known yet.
    """
    if not math.isfinite(state.UB):
        return None
    value = copies.objective + sum(p.objective for p in proposals.values())
    sq = 0.0
    for z in proposals:
        g = residuals(state, proposals[z], copies)
        if weights is None:
            n = g.norms()
            sq += n["pi"] ** 2 + n["mu"] ** 2 + n["xi"] ** 2
        else:
            sq += sum(weights.pi.get(k, 1.0) * v * v for k, v in g.pi.items())
            sq += sum(v * v for v in g.mu.values()) + weights.xi * sum(v * v for v in g.xi.values())
    if sq == 0.0:
        return {z: 0.0 for z in regions}
    target = state.UB + overshoot * max(1.0, abs(state.UB))
    a = rho * max(target - value, 0.0) / sq
    return {z: a for z in regions}


def update_duals(state: Stage1State, proposals: dict[str, RegionalProposal], copies: GlobalCopies,
                 regions: list[str] | None = None, steps: dict[str, float] | None = None,
                 weights: StepWeights | None = None) -> Stage1State:
    """Move each participating region's multipliers by step * (own copy - global copy).

    ``steps`` overrides the diminishing ``alpha(nu(z)) / beta_z`` per region;
    ``weights`` scales the step per block (default: uniform).
    """
    layout = state.layout
    for z in (regions if regions is not None else list(proposals)):
        p = proposals[z]
        d = state.duals[z]
        a = steps[z] if steps is not None else state.step(z)
        for kid in d.pi:
            wk = weights.pi.get(kid, 1.0) if weights else 1.0
            d.pi[kid] += a * wk * (p.u[kid] - copies.u[kid])
        for key in d.mu:
            f = p.flows[key]
            if state.flow_mode == "magnitude":
                f = abs(f)
            d.mu[key] += a * (f - copies.flows[key])
        wx = weights.xi if weights else 1.0
        for key in d.xi:
            s, kind, eid, end = key
            d.xi[key] += a * wx * layout.angle_scale * (p.angles[key] - copies.angle(layout, s, kind, eid, end))
        state.nu[z] += 1
    return state


def compute_lower_bound(state: Stage1State, net: Network | None = None) -> float:
    """LP-relaxation value of the Lagrangian at the current multipliers; keeps the best."""
    layout = state.layout
    total = 0.0
    for z in layout.net.regions:
        b, _ = _regional_model(layout, z, state.duals[z], state.flow_mode, relax=True)
        sol = solve_lp(b.lp())
        if not sol.optimal:
            return state.LB
        total += sol.objective
    b, _ = _tpc_model(layout, state.duals, relax=True)
    sol = solve_lp(b.lp())
    if not sol.optimal:
        return state.LB
    total += sol.objective
    state.LB = max(state.LB, total)
    return total


def lagrangian_bound(state: Stage1State, round_: int) -> float:
    """Sum of the subproblem MILP bounds, valid only if every region solved this round.

    Each term is the branch-and-bound proven bound of a subproblem at the
    current multipliers, so the sum bounds the MILP optimum from below and
    is never weaker than the LP-relaxation value.  Returns -inf (and leaves
    the state alone) when some proposal is stale.
    """
    props = state.proposals
    if state.copies is None or len(props) < len(state.layout.net.regions):
        return -math.inf
    if any(p.round != round_ for p in props.values()):
        return -math.inf
    total = state.copies.bound + sum(p.bound for p in props.values())
    state.LB = max(state.LB, total)
    return total


def _proposal_fix(state: Stage1State, p: RegionalProposal) -> dict:
    return {"u": dict(p.u), "flows": dict(p.flows), "angles": dict(p.angles)}


def primal_recovery_upper_bound(state: Stage1State, net: Network | None = None,
                                phys_cache: dict | None = None) -> float:
    """Primal recovery from the current proposals.

    For each region the consensus variables are fixed to that region's own
    proposal: the region re-solves its subproblem without multipliers (its
    cost is ``UB_z``) and the coordinator checks the proposal against its own
    constraints (``UB_tpc_z`` is 0 when consistent, +inf otherwise).  The
    reported value is ``min_z UB_tpc_z + sum_z UB_z``.  Independently the
    centralized LP with the coordinator's build vector gives a physically
    feasible objective; the best of those is the bound used for the gap.
    """
    layout = state.layout
    net = layout.net
    zero = {z: DualSet() for z in net.regions}
    ub_regions = 0.0
    ub_tpc = []
    for z in net.regions:
        p = state.proposals[z]
        fix = _proposal_fix(state, p)
        b, _ = _regional_model(layout, z, zero[z], "signed", fix=fix)
        sol = solve_milp(b.mip())
        ub_regions += sol.objective if sol.optimal else math.inf
        tb, _ = _tpc_model(layout, zero, fix=fix)
        tsol = solve_milp(tb.mip())
        ub_tpc.append(0.0 if tsol.optimal else math.inf)
    ub_recovery = min(ub_tpc) + ub_regions if ub_tpc else ub_regions
    state.UB_recovery = ub_recovery

    if state.copies is not None:
        key = tuple(state.copies.u[k.id] for k in net.candidate_lines)
        cache = phys_cache if phys_cache is not None else {}
        if key not in cache:
            cache[key] = fixed_u_dcopf(net, dict(state.copies.u))
        plan = state.tpc_plan = cache[key]
        if plan.feasible and plan.objective < state.UB:
            state.UB = plan.objective
            state.best_u = dict(plan.build)
            state.best_plan = plan
    return ub_recovery


def consensus_reached(state: Stage1State, flow_tol: float, angle_tol: float) -> bool:
    """All stakeholder copies equal the global copies within tolerance."""
    c = state.copies
    if c is None or not state.proposals:
        return False
    layout = state.layout
    for z, p in state.proposals.items():
        for kid, v in p.u.items():
            if v != c.u[kid]:
                return False
        for key, f in p.flows.items():
            if state.flow_mode == "magnitude":
                f = abs(f)
            if abs(f - c.flows[key]) > flow_tol:
                return False
        for (s, kind, eid, end), th in p.angles.items():
            if abs(th - c.angle(layout, s, kind, eid, end)) > angle_tol:
                return False
    return True


def build_consensus(state: Stage1State) -> bool:
    """All stakeholder build proposals equal the coordinator's build vector."""
    c = state.copies
    return c is not None and bool(state.proposals) and all(
        v == c.u[k] for p in state.proposals.values() for k, v in p.u.items())


def update_agreement(state: Stage1State) -> int:
    """Count consecutive rounds whose build proposals all match a feasible coordinator plan."""
    ok = build_consensus(state) and state.tpc_plan is not None and state.tpc_plan.feasible
    state.agree_streak = state.agree_streak + 1 if ok else 0
    return state.agree_streak


def check_termination(state: Stage1State, eps: float, max_iter: int,
                      stable_rounds: int = 0) -> tuple[bool, str | None]:
    """Decide whether Stage I stops, and why.

    ``consensus``: every copy (builds, flows, angles) agrees within tolerance.
    ``gap``: ``0 <= 1 - LB/UB <= eps``, every stakeholder's build proposal
    equals the coordinator's and that build vector is the one behind ``UB``.
    ``build-consensus``: the build proposals have agreed with the
    coordinator for ``stable_rounds`` consecutive rounds (0 disables).
    ``iteration-limit``: the round budget is spent.  A negative gap (LB
    above UB) never stops the run by itself.
    """
    if state.consensus:
        return True, "consensus"
    gap = state.gap
    agreed = build_consensus(state) and state.best_u == state.copies.u
    if agreed and math.isfinite(gap) and state.UB > 0 and 0.0 <= gap <= eps:
        return True, "gap"
    if stable_rounds > 0 and state.agree_streak >= stable_rounds:
        return True, "build-consensus"
    if max(state.nu.values(), default=0) >= max_iter or state.round >= max_iter:
        return True, "iteration-limit"
    return False, None


def adapt_rho(state: Stage1State, value: float, patience: int, floor: float = 1e-3) -> float:
    """Halve the Polyak factor after ``patience`` rounds without a better Lagrangian value."""
    if value > state.best_value + 1e-12 * max(1.0, abs(value)):
        state.best_value = value
        state.stall = 0
    else:
        state.stall += 1
        if state.stall >= patience:
            state.rho = max(state.rho / 2.0, floor)
            state.stall = 0
    return state.rho


@dataclass
class Stage1Result:
    u: dict[str, int]
    duals: dict[str, DualSet]
    copies: GlobalCopies
    proposals: dict[str, RegionalProposal]
    LB: float
    UB: float
    UB_recovery: float
    gap: float
    iterations: int
    reason: str
    build_consensus: bool
    trace: list[dict]
    plan: PlanResult | None

    @property
    def converged(self) -> bool:
        return self.reason in ("consensus", "gap", "build-consensus")


def result_from_state(state: Stage1State, reason: str) -> Stage1Result:
    if reason in ("consensus", "build-consensus") or state.best_u is None:
        u, plan = dict(state.copies.u), state.tpc_plan
    else:
        u, plan = dict(state.best_u), state.best_plan
    return Stage1Result(
        u=u, duals={z: d.copy() for z, d in state.duals.items()}, copies=state.copies,
        proposals=dict(state.proposals), LB=state.LB, UB=state.UB, UB_recovery=state.UB_recovery,
        gap=state.gap, iterations=state.round, reason=reason,
        build_consensus=build_consensus(state), trace=list(state.trace), plan=plan,
    )


def trace_rows(state: Stage1State) -> list[dict]:
    net = state.layout.net
    u_tpc = ";".join(str(state.copies.u[k.id]) for k in net.candidate_lines)
    rows = []
    for z in net.regions:
        p = state.proposals.get(z)
        prop = ";".join(str(p.u[k.id]) for k in state.layout.candidates[z]) if p else ""
        rows.append({"nu": state.round, "region": z, "u_prop": prop, "u_tpc": u_tpc,
                     "LB": state.LB, "UB": state.UB, "gap": state.gap})
    return rows


def run_stage1(net: Network, config: Stage1Config | None = None, schedule=None, bus=None) -> Stage1Result:
    """Run the Stage I mechanism to consensus, gap tolerance, or the iteration limit."""
    from .runtime import Stage1Session

    session = Stage1Session(net, config or Stage1Config(), schedule, bus)
    return session.run()


__all__ = [
    "DualSet", "GlobalCopies", "Layout", "RegionalProposal", "Stage1Result", "Stage1State",
    "build_regional_subproblem", "build_tpc_subproblem", "check_termination", "compute_lower_bound",
    "consensus_reached", "primal_recovery_upper_bound", "run_stage1", "solve_regional", "solve_tpc",
    "update_duals", "Status",
]
