"""Stage II: auxiliary-problem-principle (APP) consensus on boundary angles.

With the build decisions fixed, every region solves a convex QP over its
own dispatch, its internal angles and its *beliefs* about the angles at both
ends of each shared line.  Neighbouring regions must agree on those beliefs;
disagreement is priced by multipliers ``lambda`` and damped by a proximal
term.  Per iteration ``sigma`` region ``z`` minimizes::

    cost_z + sum over neighbours z', scenarios s, shared nodes a of
        eta * psi_z[a] * (psi_z^sigma[a] - psi_z'^sigma[a])
      + gamma / 2 * (psi_z[a] - psi_z^sigma[a])**2
      + lambda[z, z', s, a] * psi_z[a]

and then ``lambda[z, z', s, a] += delta * (psi_z[a] - psi_z'[a])``.  Here
``psi = base_mva * theta / x_min`` measures an angle in MW of flow it drives
across the stiffest (smallest-reactance) shared line in service, so the
multipliers land on the scale of nodal prices ($/MWh) whatever the power
base or reactance units.  Beliefs and multipliers are indexed per scenario, and every
scenario's penalty terms and multiplier step carry the scenario weight
``w_s``, exactly like its generation cost, so the parameters act on an
hourly scale.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from .centralized import PlanResult, fixed_u_dcopf, investment_cost, operational_cost
from .config import Stage2Config
from .dispatch import add_generator, node_demand, output
from .errors import DomainError, SolverError
from .netmodel import CandidateLine, ExistingLine, Network
from .solver import ModelBuilder, QuadraticProgram, Status, solve_qp

Line = ExistingLine | CandidateLine
Key = tuple[str, str, str, str]  # (z, z', scenario, node)


class AppLayout:
    """Lines in service after Stage I and the belief structure they induce."""

    def __init__(self, net: Network, u: dict[str, int]):
        self.net = net
        self.u = {k.id: int(bool(u.get(k.id, 0))) for k in net.candidate_lines}
        self.lines: list[tuple[str, Line]] = [("h", h) for h in net.existing_lines]
        self.lines += [("k", k) for k in net.candidate_lines if self.u[k.id]]
        self.shared = [(kind, l) for kind, l in self.lines if net.is_shared(l)]
        # psi = scale * theta is MW of flow per unit angle on the stiffest shared line
        self.scale = net.base_mva / min((l.reactance for _, l in self.shared), default=1.0)
        self.internal: dict[str, list[tuple[str, Line]]] = {z: [] for z in net.regions}
        self.boundary: dict[str, list[tuple[str, Line]]] = {z: [] for z in net.regions}
        for kind, l in self.lines:
            zs = net.stakeholders(l)
            if len(zs) == 1:
                self.internal[zs[0]].append((kind, l))
            else:
                for z in zs:
                    self.boundary[z].append((kind, l))
        # consensus nodes per ordered region pair
        self.pair_nodes: dict[tuple[str, str], list[str]] = {}
        for kind, l in self.shared:
            a, b = net.stakeholders(l)
            for pair in ((a, b), (b, a)):
                nodes = self.pair_nodes.setdefault(pair, [])
                for n in (l.from_node, l.to_node):
                    if n not in nodes:
                        nodes.append(n)
        self.belief_nodes: dict[str, list[str]] = {}
        for z in net.regions:
            own = set(net.region_nodes(z))
            extra = {n for _, l in self.boundary[z] for n in (l.from_node, l.to_node)}
            self.belief_nodes[z] = [n.id for n in net.nodes if n.id in own or n.id in extra]

    def neighbours(self, z: str) -> list[str]:
        return [b for (a, b) in self.pair_nodes if a == z]

    def keys(self) -> list[Key]:
        return [(a, b, s.id, n) for (a, b), nodes in self.pair_nodes.items()
                for s in self.net.scenarios for n in nodes]


@dataclass
class BeliefSet:
    """Angles (rad) each region holds for its own nodes and far ends: theta[z][(s, node)]."""

    theta: dict[str, dict[tuple[str, str], float]] = field(default_factory=dict)

    @classmethod
    def zeros(cls, layout: AppLayout) -> "BeliefSet":
        return cls({z: {(s.id, n): 0.0 for s in layout.net.scenarios for n in layout.belief_nodes[z]}
                    for z in layout.net.regions})

    def copy(self) -> "BeliefSet":
        return BeliefSet({z: dict(v) for z, v in self.theta.items()})


@dataclass
class AppDuals:
    """lambda[(z, z', s, node)] in $ per psi unit; antisymmetric in (z, z')."""

    lam: dict[Key, float] = field(default_factory=dict)

    @classmethod
    def zeros(cls, layout: AppLayout) -> "AppDuals":
        return cls({k: 0.0 for k in layout.keys()})


@dataclass
class RegionalDispatch:
    region: str
    dispatch: dict[str, dict[str, float]]
    flows: dict[str, dict[str, float]]
    objective: float
    cost: float


@dataclass
class Stage2State:
    layout: AppLayout
    beliefs: BeliefSet
    previous: BeliefSet
    duals: AppDuals
    eta: float = 1.0
    gamma: float = 2.0
    delta: float = 1.0
    eps_app: float = 1e-4
    sigma: int = 0
    results: dict[str, RegionalDispatch] = field(default_factory=dict)
    trace: list[dict] = field(default_factory=list)

    @classmethod
    def initial(cls, net: Network, u: dict[str, int], cfg: Stage2Config) -> "Stage2State":
        cfg.check()
        layout = AppLayout(net, u)
        b = BeliefSet.zeros(layout)
        return cls(layout, b, b.copy(), AppDuals.zeros(layout), cfg.eta, cfg.gamma, cfg.delta, cfg.eps_app)


class _RegionQP:
    """Constraint set of one region's auxiliary problem; only the costs change per iteration."""

    def __init__(self, layout: AppLayout, z: str, gamma: float):
        net = layout.net
        if z not in net.regions:
            raise DomainError(f"unknown region {z!r}", "region")
        self.layout, self.z = layout, z
        b = ModelBuilder()
        B = net.angle_bound
        own = set(net.region_nodes(z))
        self.theta: dict[tuple[str, str], int] = {}
        self.segs: dict[tuple[str, str], list[int]] = {}
        self.flow: dict[tuple[str, str], int] = {}
        for s in net.scenarios:
            for n in layout.belief_nodes[z]:
                self.theta[s.id, n] = b.var(f"theta[{s.id},{n}]", -B, B)
            bal: dict[str, list] = {n: [] for n in own}
            for g in net.generators:
                if g.node in own:
                    self.segs[s.id, g.id] = add_generator(b, net, g, s)
                    bal[g.node] += [(j, 1.0) for j in self.segs[s.id, g.id]]
            for kind, l in layout.internal[z] + layout.boundary[z]:
                f = self.flow[s.id, l.id] = b.var(f"p[{s.id},{kind},{l.id}]", -l.capacity, l.capacity)
                bs = net.susceptance(l.reactance)
                b.eq([(f, 1.0), (self.theta[s.id, l.from_node], -bs), (self.theta[s.id, l.to_node], bs)], 0.0)
                if l.from_node in own:
                    bal[l.from_node].append((f, -1.0))
                if l.to_node in own:
                    bal[l.to_node].append((f, 1.0))
            d = node_demand(net, s)
            for n in sorted(own, key=layout.belief_nodes[z].index):
                b.eq(bal[n], d[n], f"balance[{s.id},{n}]")
        k = layout.scale
        for zp in layout.neighbours(z):
            for s in net.scenarios:
                for n in layout.pair_nodes[z, zp]:
                    j = self.theta[s.id, n]
                    b.add_quad(j, j, s.weight * k * k * gamma)
        self.gamma = gamma
        self.qp = b.qp()

    def problem(self, state: Stage2State) -> QuadraticProgram:
        layout, z = self.layout, self.z
        k = layout.scale
        c = self.qp.lp.c.copy()
        for zp in layout.neighbours(z):
            for s in layout.net.scenarios:
                for n in layout.pair_nodes[z, zp]:
                    j = self.theta[s.id, n]
                    own_prev = state.beliefs.theta[z][s.id, n]
                    other_prev = state.beliefs.theta[zp][s.id, n]
                    w = s.weight
                    c[j] += w * k * k * state.eta * (own_prev - other_prev)
                    c[j] += -w * k * k * state.gamma * own_prev
                    c[j] += k * state.duals.lam[z, zp, s.id, n]
        return QuadraticProgram(dataclasses.replace(self.qp.lp, c=c), self.qp.Q)


def build_app_subproblem(z: str, state: Stage2State, net: Network | None = None,
                         u: dict[str, int] | None = None) -> QuadraticProgram:
    """Auxiliary QP of region ``z`` at the current beliefs and multipliers."""
    return _RegionQP(state.layout, z, state.gamma).problem(state)


def update_lambdas(state: Stage2State) -> Stage2State:
    """``lambda[z, z', s, a] += w_s * delta * (psi_z[a] - psi_z'[a])`` for every ordered pair."""
    k = state.layout.scale
    th = state.beliefs.theta
    weight = {s.id: s.weight for s in state.layout.net.scenarios}
    for key in state.duals.lam:
        z, zp, s, n = key
        state.duals.lam[key] += weight[s] * state.delta * k * (th[z][s, n] - th[zp][s, n])
    state.sigma += 1
    return state


def app_residual(state: Stage2State) -> float:
    """Largest per (pair, line, scenario) sum of squared end mismatches, in psi units."""
    layout = state.layout
    k = layout.scale
    th = state.beliefs.theta
    worst = 0.0
    for kind, l in layout.shared:
        z, zp = layout.net.stakeholders(l)
        for s in layout.net.scenarios:
            r = sum((k * (th[z][s.id, n] - th[zp][s.id, n])) ** 2 for n in (l.from_node, l.to_node))
            worst = max(worst, r)
    return worst


def belief_change(state: Stage2State) -> float:
    """Largest squared move of a consensus belief since the previous iterate, in psi units."""
    k = state.layout.scale
    now, before = state.beliefs.theta, state.previous.theta
    worst = 0.0
    for z, zp, s, n in state.layout.keys():
        worst = max(worst, (k * (now[z][s, n] - before[z][s, n])) ** 2)
    return worst


@dataclass
class Stage2Result:
    plan: PlanResult
    residuals: list[float]
    iterations: int
    converged: bool
    reason: str
    beliefs: BeliefSet
    duals: AppDuals
    trace: list[dict]
    regional: dict[str, RegionalDispatch]


class Stage2Engine:
    """Holds the per-region QP structures and advances APP iterations."""

    def __init__(self, net: Network, u: dict[str, int], cfg: Stage2Config):
        self.net = net
        self.cfg = cfg
        self.state = Stage2State.initial(net, u, cfg)
        self.models = {z: _RegionQP(self.state.layout, z, cfg.gamma) for z in net.regions}
        self.residuals: list[float] = []
        self.changes: list[float] = []

    def settled(self) -> bool:
        """Consensus residual and iterate movement both within ``eps_app``."""
        tol = self.cfg.eps_app
        return bool(self.residuals) and self.residuals[-1] <= tol and self.changes[-1] <= tol

    def solve_region(self, z: str) -> tuple[RegionalDispatch, dict[tuple[str, str], float]]:
        m = self.models[z]
        sol = solve_qp(m.problem(self.state), check=False)
        if sol.status != Status.OPTIMAL:
            raise SolverError(f"region {z} auxiliary problem {sol.status.value} at iteration {self.state.sigma + 1}",
                              sol.status.value)
        x = sol.x
        beliefs = {key: float(x[j]) for key, j in m.theta.items()}
        dispatch: dict[str, dict[str, float]] = {}
        for (s, g), segs in m.segs.items():
            dispatch.setdefault(s, {})[g] = output(x, segs)
        flows: dict[str, dict[str, float]] = {}
        for (s, lid), j in m.flow.items():
            flows.setdefault(s, {})[lid] = float(x[j])
        gens = {g.id: g for g in self.net.generators}
        cost = sum(sc.weight * gens[g].cost(p) for sc in self.net.scenarios for g, p in dispatch.get(sc.id, {}).items())
        return RegionalDispatch(z, dispatch, flows, sol.objective, cost), beliefs

    def commit(self, results: dict[str, tuple[RegionalDispatch, dict]]) -> float:
        st = self.state
        st.previous = st.beliefs.copy()
        for z, (rd, beliefs) in results.items():
            st.results[z] = rd
            st.beliefs.theta[z].update(beliefs)
        update_lambdas(st)
        r = app_residual(st)
        self.residuals.append(r)
        self.changes.append(belief_change(st))
        st.trace.append({"sigma": st.sigma, "max_residual": r, "change": self.changes[-1],
                         "objective": self.objective(),
                         **{f"obj_{z}": rd.cost for z, rd in st.results.items()},
                         **{f"flow_{s}_{lid}": v for s, fl in self.consensus_flows().items() for lid, v in fl.items()}})
        return r

    def consensus_flows(self) -> dict[str, dict[str, float]]:
        """Shared-line flows averaged over both stakeholders' belief-based values."""
        out: dict[str, dict[str, float]] = {}
        layout = self.state.layout
        for kind, l in layout.shared:
            for s in self.net.scenarios:
                vals = [self.state.results[z].flows[s.id][l.id]
                        for z in self.net.stakeholders(l) if z in self.state.results]
                if vals:
                    out.setdefault(s.id, {})[l.id] = sum(vals) / len(vals)
        return out

    def objective(self) -> float:
        st = self.state
        op = sum(rd.cost for rd in st.results.values())
        return op + investment_cost(self.net, st.layout.u)

    def step(self, regions: list[str] | None = None) -> float:
        results = {z: self.solve_region(z) for z in (regions or self.net.regions)}
        return self.commit(results)

    def plan(self) -> PlanResult:
        net, st = self.net, self.state
        layout = st.layout
        plan = PlanResult(status=Status.OPTIMAL.value, build=dict(layout.u))
        shared = self.consensus_flows()
        for s in net.scenarios:
            plan.dispatch[s.id] = {}
            for rd in st.results.values():
                plan.dispatch[s.id].update(rd.dispatch.get(s.id, {}))
            flows = {}
            for z, rd in st.results.items():
                for lid, v in rd.flows.get(s.id, {}).items():
                    flows.setdefault(lid, v)
            flows.update(shared.get(s.id, {}))
            plan.flows[s.id] = {h.id: flows.get(h.id, 0.0) for h in net.existing_lines}
            plan.candidate_flows[s.id] = {k.id: flows.get(k.id, 0.0) for k in net.candidate_lines}
            plan.angles[s.id] = {n.id: st.beliefs.theta[n.region][s.id, n.id] for n in net.nodes}
        plan.operational_cost = operational_cost(net, plan.dispatch)
        plan.investment_cost = investment_cost(net, layout.u)
        plan.objective = plan.operational_cost + plan.investment_cost
        return plan

    def result(self, reason: str) -> Stage2Result:
        st = self.state
        return Stage2Result(self.plan(), list(self.residuals), st.sigma, reason == "residual", reason,
                            st.beliefs.copy(), AppDuals(dict(st.duals.lam)), list(st.trace), dict(st.results))


def run_stage2(net: Network, u: dict[str, int], config: Stage2Config | None = None, schedule=None,
               bus=None) -> Stage2Result:
    """Iterate regional QPs and multiplier updates until the residual meets ``eps_app``."""
    from .runtime import Stage2Session

    return Stage2Session(net, u, config or Stage2Config(), schedule, bus).run()


__all__ = [
    "AppDuals", "AppLayout", "BeliefSet", "Stage2Result", "Stage2State", "app_residual",
    "build_app_subproblem", "fixed_u_dcopf", "run_stage2", "update_lambdas",
]
