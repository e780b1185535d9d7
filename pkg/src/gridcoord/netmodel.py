"""Multi-region network data model, JSON case I/O and shared numeric helpers.

A case describes one interconnected system split into planning regions.
Powers are in MW, reactances in per unit, costs in $ and $/MWh, and
scenario weights in hours.  DC line flow in MW is
``base_mva * (theta_from - theta_to) / reactance``; with the default
``base_mva = 1`` this is the plain ``delta_theta / x`` relation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import CaseParseError, CaseReferenceError, DomainError

CASE_FORMAT = "gridcoord-case/1"


@dataclass(frozen=True)
class Node:
    id: str
    region: str


@dataclass(frozen=True)
class Generator:
    """Generator with a convex piecewise-linear cost.

    ``cost_curve`` is a sequence of ``(segment_upper_bound_MW, marginal_cost)``
    pairs; the first segment starts at 0 MW.
    """

    id: str
    node: str
    cost_curve: tuple[tuple[float, float], ...]
    p_min: float = 0.0
    p_max: float = 0.0

    def segments(self) -> list[tuple[float, float]]:
        """Return ``(width, marginal_cost)`` for each cost segment."""
        out = []
        lo = 0.0
        for upper, mc in self.cost_curve:
            out.append((upper - lo, mc))
            lo = upper
        return out

    def cost(self, p: float) -> float:
        """Hourly cost of producing ``p`` MW (integral of the marginal cost)."""
        total = 0.0
        lo = 0.0
        for upper, mc in self.cost_curve:
            if p <= lo:
                break
            total += (min(p, upper) - lo) * mc
            lo = upper
        return total


@dataclass(frozen=True)
class Load:
    id: str
    node: str
    demand: float


@dataclass(frozen=True)
class ExistingLine:
    id: str
    from_node: str
    to_node: str
    reactance: float
    capacity: float


@dataclass(frozen=True)
class CandidateLine:
    id: str
    from_node: str
    to_node: str
    reactance: float
    capacity: float
    build_cost: float
    lifetime: int


@dataclass(frozen=True)
class Scenario:
    """Operating scenario; ``demand`` and ``gen_limits`` override base values by id."""

    id: str
    weight: float
    demand: dict[str, float] = field(default_factory=dict)
    gen_limits: dict[str, tuple[float, float]] = field(default_factory=dict)


@dataclass
class Network:
    regions: list[str]
    nodes: list[Node]
    generators: list[Generator]
    loads: list[Load]
    existing_lines: list[ExistingLine]
    candidate_lines: list[CandidateLine]
    scenarios: list[Scenario]
    interest_rate: float
    angle_bound: float = math.pi
    base_mva: float = 1.0
    name: str = ""
    description: str = ""

    # -- lookups -----------------------------------------------------------

    @cached_property
    def node_region(self) -> dict[str, str]:
        return {n.id: n.region for n in self.nodes}

    @cached_property
    def node_index(self) -> dict[str, int]:
        return {n.id: i for i, n in enumerate(self.nodes)}

    @property
    def reference_node(self) -> str:
        """Lowest node id; pinned to zero angle in network-wide models."""
        return min(n.id for n in self.nodes)

    def region_nodes(self, region: str) -> list[str]:
        return [n.id for n in self.nodes if n.region == region]

    def stakeholders(self, line: ExistingLine | CandidateLine) -> tuple[str, ...]:
        """Regions owning the endpoints of ``line``, in ``regions`` order."""
        ends = {self.node_region[line.from_node], self.node_region[line.to_node]}
        return tuple(z for z in self.regions if z in ends)

    def is_shared(self, line: ExistingLine | CandidateLine) -> bool:
        return self.node_region[line.from_node] != self.node_region[line.to_node]

    @property
    def shared_existing(self) -> list[ExistingLine]:
        return [h for h in self.existing_lines if self.is_shared(h)]

    def demand(self, load: Load, scenario: Scenario) -> float:
        return scenario.demand.get(load.id, load.demand)

    def gen_limits(self, gen: Generator, scenario: Scenario) -> tuple[float, float]:
        lo, hi = scenario.gen_limits.get(gen.id, (gen.p_min, gen.p_max))
        return float(lo), float(hi)

    def annualized_cost(self, cand: CandidateLine) -> float:
        """Capital cost of ``cand`` times its capital-recovery factor."""
        return cand.build_cost * annuity_factor(self.interest_rate, cand.lifetime)

    def susceptance(self, reactance: float) -> float:
        """MW of flow per radian of angle difference."""
        return self.base_mva / reactance

    def with_candidates(self, candidates: Iterable[CandidateLine]) -> "Network":
        """Copy of the network with a different candidate list."""
        return Network(
            regions=list(self.regions), nodes=list(self.nodes),
            generators=list(self.generators), loads=list(self.loads),
            existing_lines=list(self.existing_lines),
            candidate_lines=list(candidates), scenarios=list(self.scenarios),
            interest_rate=self.interest_rate, angle_bound=self.angle_bound,
            base_mva=self.base_mva, name=self.name, description=self.description,
        )


# -- numeric helpers -------------------------------------------------------


def annuity_factor(r: float, T: float) -> float:
    """Capital-recovery factor ``r (1+r)^T / ((1+r)^T - 1)``.

    Evaluated through ``log1p``/``expm1`` so that tiny interest rates stay
    accurate (the naive form loses all digits of ``(1+r)^T - 1`` near r=0).
    """
    if not r > 0:
        raise DomainError(f"interest rate must be > 0, got {r}", "interest_rate")
    if not T >= 1:
        raise DomainError(f"lifetime must be >= 1 year, got {T}", "lifetime")
    growth = T * math.log1p(r)
    return r / -math.expm1(-growth)


def incidence(net: Network) -> np.ndarray:
    """Node-to-branch incidence; columns are existing lines then candidates."""
    lines = [*net.existing_lines, *net.candidate_lines]
    A = np.zeros((len(net.nodes), len(lines)))
    idx = net.node_index
    for col, line in enumerate(lines):
        A[idx[line.from_node], col] = 1.0
        A[idx[line.to_node], col] = -1.0
    return A


# -- validation ------------------------------------------------------------


@dataclass(frozen=True)
class Issue:
    path: str
    message: str

    def __str__(self) -> str:
        return f"{self.path}: {self.message}"


@dataclass
class ValidationReport:
    violations: list[Issue] = field(default_factory=list)
    warnings: list[Issue] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def _duplicates(ids: list[str]) -> set[str]:
    seen: set[str] = set()
    dup = set()
    for i in ids:
        if i in seen:
            dup.add(i)
        seen.add(i)
    return dup


def validate(net: Network) -> ValidationReport:
    """Check every type invariant and collect connectivity/adequacy warnings."""
    rep = ValidationReport()
    bad = rep.violations.append

    if not net.regions:
        bad(Issue("regions", "at least one region is required"))
    for d in _duplicates(list(net.regions)):
        bad(Issue("regions", f"duplicate region id {d!r}"))
    if not net.interest_rate > 0:
        bad(Issue("interest_rate", f"must be > 0, got {net.interest_rate}"))
    if not net.angle_bound > 0:
        bad(Issue("angle_bound", f"must be > 0, got {net.angle_bound}"))
    if not net.base_mva > 0:
        bad(Issue("base_mva", f"must be > 0, got {net.base_mva}"))

    categories = {
        "nodes": net.nodes, "generators": net.generators, "loads": net.loads,
        "existing_lines": net.existing_lines, "candidate_lines": net.candidate_lines,
        "scenarios": net.scenarios,
    }
    for cat, items in categories.items():
        for d in _duplicates([x.id for x in items]):
            bad(Issue(cat, f"duplicate id {d!r}"))

    regions = set(net.regions)
    node_ids = {n.id for n in net.nodes}
    for i, n in enumerate(net.nodes):
        if n.region not in regions:
            bad(Issue(f"nodes[{i}].region", f"unknown region {n.region!r}"))
    if not net.nodes:
        bad(Issue("nodes", "at least one node is required"))
    if not net.scenarios:
        bad(Issue("scenarios", "at least one scenario is required"))

    for i, s in enumerate(net.scenarios):
        if not s.weight > 0:
            bad(Issue(f"scenarios[{i}].weight", f"must be > 0, got {s.weight}"))

    gen_ids = {g.id for g in net.generators}
    load_ids = {d.id for d in net.loads}
    for i, s in enumerate(net.scenarios):
        for lid in s.demand:
            if lid not in load_ids:
                bad(Issue(f"scenarios[{i}].demand", f"unknown load {lid!r}"))
        for gid in s.gen_limits:
            if gid not in gen_ids:
                bad(Issue(f"scenarios[{i}].gen_limits", f"unknown generator {gid!r}"))

    for i, g in enumerate(net.generators):
        p = f"generators[{i}]"
        if g.node not in node_ids:
            bad(Issue(f"{p}.node", f"unknown node {g.node!r}"))
        if not g.cost_curve:
            bad(Issue(f"{p}.cost_curve", "needs at least one segment"))
            continue
        prev_ub, prev_mc = 0.0, -math.inf
        for j, (ub, mc) in enumerate(g.cost_curve):
            if not ub > prev_ub:
                bad(Issue(f"{p}.cost_curve[{j}]", "segment bounds must be strictly increasing from 0"))
            if mc < prev_mc:
                bad(Issue(f"{p}.cost_curve[{j}]", "marginal costs must be nondecreasing (convex cost)"))
            prev_ub, prev_mc = ub, mc
        last_ub = g.cost_curve[-1][0]
        for s in net.scenarios or [Scenario("base", 1.0)]:
            lo, hi = net.gen_limits(g, s)
            where = f"{p}[{s.id}]" if g.id in s.gen_limits else p
            msgs = []
            if lo > hi:
                msgs.append(f"p_min {lo} exceeds p_max {hi}")
            if lo < 0:
                msgs.append(f"p_min {lo} is negative; cost curves start at 0 MW")
            if hi > last_ub:
                msgs.append(f"p_max {hi} exceeds last cost segment bound {last_ub}")
            for m in msgs:
                if Issue(where, m) not in rep.violations:
                    bad(Issue(where, m))

    for i, d in enumerate(net.loads):
        if d.node not in node_ids:
            bad(Issue(f"loads[{i}].node", f"unknown node {d.node!r}"))
        for s in net.scenarios:
            if net.demand(d, s) < 0:
                bad(Issue(f"loads[{i}][{s.id}]", "demand must be >= 0"))

    for cat, items in (("existing_lines", net.existing_lines), ("candidate_lines", net.candidate_lines)):
        for i, line in enumerate(items):
            p = f"{cat}[{i}]"
            for end in ("from_node", "to_node"):
                if getattr(line, end) not in node_ids:
                    bad(Issue(f"{p}.{end}", f"unknown node {getattr(line, end)!r}"))
            if line.from_node == line.to_node:
                bad(Issue(p, "line endpoints must differ"))
            if not line.reactance > 0:
                bad(Issue(f"{p}.reactance", f"must be > 0, got {line.reactance}"))
            if not line.capacity > 0:
                bad(Issue(f"{p}.capacity", f"must be > 0, got {line.capacity}"))
            if isinstance(line, CandidateLine):
                if line.build_cost < 0:
                    bad(Issue(f"{p}.build_cost", "must be >= 0"))
                if int(line.lifetime) != line.lifetime or line.lifetime < 1:
                    bad(Issue(f"{p}.lifetime", f"must be an integer >= 1, got {line.lifetime}"))

    if rep.violations:
        return rep
    _connectivity_warnings(net, rep)
    _adequacy_warnings(net, rep)
    return rep


def _connectivity_warnings(net: Network, rep: ValidationReport) -> None:
    n = len(net.nodes)
    idx = net.node_index
    rows = [idx[h.from_node] for h in net.existing_lines]
    cols = [idx[h.to_node] for h in net.existing_lines]
    graph = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    ncomp, labels = connected_components(graph, directed=False)
    if ncomp <= 1:
        return
    main = np.bincount(labels).argmax()
    loaded = {d.node for d in net.loads if any(net.demand(d, s) > 0 for s in net.scenarios)}
    for node, lab in zip(net.nodes, labels):
        if lab != main:
            extra = " and carries load" if node.id in loaded else ""
            rep.warnings.append(Issue(f"nodes[{idx[node.id]}]",
                                      f"node {node.id!r} is disconnected from the main existing-line network{extra}"))


def _adequacy_warnings(net: Network, rep: ValidationReport) -> None:
    for s in net.scenarios:
        load = sum(net.demand(d, s) for d in net.loads)
        cap = sum(net.gen_limits(g, s)[1] for g in net.generators)
        if load > cap:
            rep.warnings.append(Issue(f"scenarios[{s.id}]", f"total load {load} exceeds generation capacity {cap}"))
        for z in net.regions:
            nodes = set(net.region_nodes(z))
            zload = sum(net.demand(d, s) for d in net.loads if d.node in nodes)
            zgen = sum(net.gen_limits(g, s)[1] for g in net.generators if g.node in nodes)
            imports = sum(l.capacity for l in [*net.existing_lines, *net.candidate_lines]
                          if net.is_shared(l) and (l.from_node in nodes or l.to_node in nodes))
            if zload > zgen + imports:
                rep.warnings.append(Issue(f"regions[{z}]",
                                          f"scenario {s.id}: load {zload} exceeds generation {zgen} plus import capacity {imports}"))


# -- JSON I/O ----------------------------------------------------------------


def _require(obj: dict, key: str, path: str):
    if key not in obj:
        raise CaseParseError(f"{path}: missing required key {key!r}")
    return obj[key]


def network_from_dict(data: dict) -> Network:
    """Build a Network from the decoded JSON case; raises on any invariant violation."""
    if not isinstance(data, dict):
        raise CaseParseError("case root must be a JSON object")
    version = data.get("version", CASE_FORMAT)
    if version != CASE_FORMAT:
        raise CaseParseError(f"unsupported case version {version!r} (expected {CASE_FORMAT!r})")
    try:
        regions = [str(z) for z in _require(data, "regions", "case")]
        nodes = [Node(str(n["id"]), str(n["region"])) for n in _require(data, "nodes", "case")]
        generators = [
            Generator(
                id=str(g["id"]), node=str(g["node"]),
                cost_curve=tuple((float(ub), float(mc)) for ub, mc in g["cost_curve"]),
                p_min=float(g.get("p_min", 0.0)), p_max=float(g["p_max"]),
            )
            for g in data.get("generators", [])
        ]
        loads = [Load(str(d["id"]), str(d["node"]), float(d["demand"])) for d in data.get("loads", [])]
        existing = [
            ExistingLine(str(h["id"]), str(h["from"]), str(h["to"]), float(h["reactance"]), float(h["capacity"]))
            for h in data.get("existing_lines", [])
        ]
        candidates = [
            CandidateLine(str(k["id"]), str(k["from"]), str(k["to"]), float(k["reactance"]),
                          float(k["capacity"]), float(k["build_cost"]), k.get("lifetime", 1))
            for k in data.get("candidate_lines", [])
        ]
        scenarios = [
            Scenario(
                id=str(s["id"]), weight=float(s.get("weight", 1.0)),
                demand={str(k): float(v) for k, v in s.get("demand", {}).items()},
                gen_limits={str(k): (float(v[0]), float(v[1])) for k, v in s.get("gen_limits", {}).items()},
            )
            for s in _require(data, "scenarios", "case")
        ]
        net = Network(
            regions=regions, nodes=nodes, generators=generators, loads=loads,
            existing_lines=existing, candidate_lines=candidates, scenarios=scenarios,
            interest_rate=float(_require(data, "interest_rate", "case")),
            angle_bound=float(data.get("angle_bound", math.pi)),
            base_mva=float(data.get("base_mva", 1.0)),
            name=str(data.get("name", "")), description=str(data.get("description", "")),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise CaseParseError(f"malformed case record: {exc!r}") from exc

    if not net.regions:
        raise DomainError("at least one region is required", "regions")
    _check_references(net)
    rep = validate(net)
    if rep.violations:
        first = rep.violations[0]
        more = f" (+{len(rep.violations) - 1} more)" if len(rep.violations) > 1 else ""
        raise DomainError(first.message + more, first.path)
    return net


def _check_references(net: Network) -> None:
    regions = set(net.regions)
    nodes = {n.id for n in net.nodes}
    for i, n in enumerate(net.nodes):
        if n.region not in regions:
            raise CaseReferenceError(f"nodes[{i}].region: unknown region {n.region!r}")
    for cat, items, attrs in (
        ("generators", net.generators, ("node",)),
        ("loads", net.loads, ("node",)),
        ("existing_lines", net.existing_lines, ("from_node", "to_node")),
        ("candidate_lines", net.candidate_lines, ("from_node", "to_node")),
    ):
        for i, item in enumerate(items):
            for a in attrs:
                if getattr(item, a) not in nodes:
                    raise CaseReferenceError(f"{cat}[{i}].{a}: unknown node {getattr(item, a)!r}")
    gens = {g.id for g in net.generators}
    loads = {d.id for d in net.loads}
    for i, s in enumerate(net.scenarios):
        for lid in s.demand:
            if lid not in loads:
                raise CaseReferenceError(f"scenarios[{i}].demand: unknown load {lid!r}")
        for gid in s.gen_limits:
            if gid not in gens:
                raise CaseReferenceError(f"scenarios[{i}].gen_limits: unknown generator {gid!r}")


def network_to_dict(net: Network) -> dict:
    return {
        "version": CASE_FORMAT,
        "name": net.name,
        "description": net.description,
        "regions": list(net.regions),
        "nodes": [{"id": n.id, "region": n.region} for n in net.nodes],
        "generators": [
            {"id": g.id, "node": g.node, "cost_curve": [list(seg) for seg in g.cost_curve],
             "p_min": g.p_min, "p_max": g.p_max}
            for g in net.generators
        ],
        "loads": [{"id": d.id, "node": d.node, "demand": d.demand} for d in net.loads],
        "existing_lines": [
            {"id": h.id, "from": h.from_node, "to": h.to_node, "reactance": h.reactance, "capacity": h.capacity}
            for h in net.existing_lines
        ],
        "candidate_lines": [
            {"id": k.id, "from": k.from_node, "to": k.to_node, "reactance": k.reactance,
             "capacity": k.capacity, "build_cost": k.build_cost, "lifetime": k.lifetime}
            for k in net.candidate_lines
        ],
        "scenarios": [
            {"id": s.id, "weight": s.weight, "demand": dict(s.demand),
             "gen_limits": {k: list(v) for k, v in s.gen_limits.items()}}
            for s in net.scenarios
        ],
        "interest_rate": net.interest_rate,
        "angle_bound": net.angle_bound,
        "base_mva": net.base_mva,
    }


def load_case(path: str | Path) -> Network:
    """Read and validate a JSON case file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise CaseParseError(f"cannot read case file {str(path)!r}: {exc.strerror}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CaseParseError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from exc
    return network_from_dict(data)


def save_case(net: Network, path: str | Path) -> None:
    Path(path).write_text(json.dumps(network_to_dict(net), indent=2) + "\n")
