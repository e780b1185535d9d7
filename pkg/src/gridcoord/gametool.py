"""Two-planner build/not-build game over a single candidate line.

Each planner chooses ``1`` (build) or ``0`` (do not build); the line is
built only in cell ``(1, 1)``.  A cell's regional cost is the planner's own
scenario-weighted generation cost, plus half the annualized investment when
the line is built, adjusted by the payoff convention:

``plain``
    no transfers.
``bribe(B)``
    in cells ``(1, 0)`` and ``(0, 1)`` the planner proposing the line pays
    ``B`` to the one refusing it.  ``bribe`` alone uses B = investment share.

With ``congestion_rent=True`` each shared line's congestion rent
(flow times the price difference across it) is credited half to each
stakeholder; it is off by default.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from itertools import product

from .centralized import fixed_u_dcopf, nodal_prices
from .errors import DomainError
from .netmodel import Network
from .serialize import dumps

Cell = tuple[int, int]
CELLS: tuple[Cell, ...] = ((0, 0), (0, 1), (1, 0), (1, 1))


@dataclass(frozen=True)
class Convention:
    """Payoff convention; ``bribe`` is None for ``plain``."""

    name: str = "plain"
    bribe: float | None = None
    congestion_rent: bool = False

    @property
    def tag(self) -> str:
        base = self.name if self.bribe is None else f"bribe({self.bribe:g})"
        return base + ("+rent" if self.congestion_rent else "")


def parse_convention(spec: str | Convention, net: Network | None = None,
                     congestion_rent: bool = False) -> Convention:
    """Parse ``plain``, ``bribe`` or ``bribe(B)``; bare ``bribe`` needs ``net`` for the default B."""
    if isinstance(spec, Convention):
        return spec
    s = spec.strip().lower()
    if s == "plain":
        return Convention("plain", None, congestion_rent)
    m = re.fullmatch(r"bribe(?:\(\s*([-+0-9.eE]+)\s*\))?", s)
    if not m:
        raise DomainError(f"unknown payoff convention {spec!r}", "convention")
    if m.group(1) is not None:
        b = float(m.group(1))
    else:
        if net is None:
            raise DomainError("default bribe needs the network", "convention")
        b = investment_share(net)
    if b < 0:
        raise DomainError("bribe must be >= 0", "convention")
    return Convention("bribe", b, congestion_rent)


def _check_shape(net: Network) -> None:
    if len(net.regions) != 2:
        raise DomainError(f"the game needs exactly 2 regions, got {len(net.regions)}", "regions")
    if len(net.candidate_lines) != 1:
        raise DomainError(f"the game needs exactly 1 candidate line, got {len(net.candidate_lines)}",
                          "candidate_lines")


def investment_share(net: Network) -> float:
    """Half the annualized cost of the single candidate."""
    _check_shape(net)
    return 0.5 * net.annualized_cost(net.candidate_lines[0])


def _rent(net: Network, plan, u: dict[str, int]) -> float:
    prices = nodal_prices(net, u)
    total = 0.0
    lines = [(h, plan.flows) for h in net.existing_lines]
    lines += [(k, plan.candidate_flows) for k in net.candidate_lines]
    for line, flows in lines:
        if not net.is_shared(line):
            continue
        for s in net.scenarios:
            p = prices[s.id]
            total += s.weight * flows[s.id][line.id] * (p[line.to_node] - p[line.from_node])
    return total


def _costs(net: Network, cell: Cell, conv: Convention) -> tuple[float, float, float]:
    """Regional costs and social cost of one cell."""
    a, b = cell
    k = net.candidate_lines[0]
    u = {k.id: int(a == 1 and b == 1)}
    plan = fixed_u_dcopf(net, u)
    if not plan.feasible:
        raise DomainError(f"dispatch with u = {u[k.id]} is {plan.status}", "cell")
    region = net.node_region
    gens = {g.id: g for g in net.generators}
    own = dict.fromkeys(net.regions, 0.0)
    for s in net.scenarios:
        for g, p in plan.dispatch[s.id].items():
            own[region[gens[g].node]] += s.weight * gens[g].cost(p)
    z1, z2 = net.regions
    c = [own[z1], own[z2]]
    if u[k.id]:
        share = 0.5 * net.annualized_cost(k)
        c = [c[0] + share, c[1] + share]
    if conv.bribe is not None and a != b:
        payer = 0 if a == 1 else 1
        c[payer] += conv.bribe
        c[1 - payer] -= conv.bribe
    if conv.congestion_rent:
        half = 0.5 * _rent(net, plan, u)
        c = [c[0] - half, c[1] - half]
    return c[0], c[1], plan.objective


def regional_cost(net: Network, decisions: Cell, convention: str | Convention = "plain") -> tuple[float, float]:
    """Costs of both planners when they play ``decisions = (a, b)``.

    Raises
    ------
    DomainError
        If the network does not have exactly two regions and one candidate.
    """
    _check_shape(net)
    if tuple(decisions) not in CELLS:
        raise DomainError(f"decisions must be in {{0,1}}^2, got {decisions}", "decisions")
    c1, c2, _ = _costs(net, tuple(decisions), parse_convention(convention, net))
    return c1, c2


@dataclass
class GameMatrix:
    """Costs of both planners and the social cost for every cell."""

    regions: tuple[str, str]
    convention: str
    costs: dict[Cell, tuple[float, float]] = field(default_factory=dict)
    social: dict[Cell, float] = field(default_factory=dict)

    def unallocated(self, cell: Cell) -> float:
        """Social cost not assigned to either planner (transfers and rent excluded)."""
        return self.social[cell] - sum(self.costs[cell])

    def to_dict(self) -> dict:
        return {
            "regions": list(self.regions),
            "convention": self.convention,
            "cells": [{"a": a, "b": b, "cost": list(self.costs[a, b]), "social_cost": self.social[a, b]}
                      for a, b in CELLS],
            "nash_equilibria": [list(c) for c in find_nash_equilibria(self)],
            "social_optimum": [list(c) for c in find_social_optimum(self)],
        }

    def to_json(self) -> str:
        return dumps(self.to_dict())

    def to_text(self) -> str:
        """Aligned table: rows are the first planner's choice, columns the second's."""
        z1, z2 = self.regions
        ne, so = set(find_nash_equilibria(self)), set(find_social_optimum(self))
        values = {c: f"({self.costs[c][0]:.2f}, {self.costs[c][1]:.2f})" for c in CELLS}
        w0 = max(len(f"{z1}\\{z2}"), len(f"{z1}=1"))
        w = max(len(v) for v in values.values())

        def cell(c: Cell) -> str:
            marks = ("*" if c in ne else "") + ("+" if c in so else "")
            return f"{values[c]:>{w}}{marks:<2}"

        lines = [f"convention: {self.convention}",
                 f"{z1 + chr(92) + z2:<{w0}}  {z2 + '=0':>{w}}    {z2 + '=1':>{w}}  "]
        for a in (0, 1):
            lines.append(f"{z1 + '=' + str(a):<{w0}}  {cell((a, 0))}  {cell((a, 1))}")
        lines.append("social cost: " + ", ".join(f"{c}={self.social[c]:.2f}" for c in CELLS))
        lines.append("* Nash equilibrium   + social optimum")
        return "\n".join(line.rstrip() for line in lines) + "\n"


def game_matrix(net: Network, convention: str | Convention = "plain", congestion_rent: bool = False) -> GameMatrix:
    """Evaluate all four cells under one convention."""
    _check_shape(net)
    conv = parse_convention(convention, net, congestion_rent)
    gm = GameMatrix(tuple(net.regions), conv.tag)
    for cell in CELLS:
        c1, c2, social = _costs(net, cell, conv)
        gm.costs[cell] = (c1, c2)
        gm.social[cell] = social
    return gm


def _equal(x: float, y: float) -> bool:
    return abs(x - y) <= 1e-9 * max(1.0, abs(x), abs(y))


def find_nash_equilibria(gm: GameMatrix) -> list[Cell]:
    """Pure equilibria: no planner lowers its own cost by switching alone."""
    out = []
    for a, b in CELLS:
        c1, c2 = gm.costs[a, b]
        d1 = gm.costs[1 - a, b][0]
        d2 = gm.costs[a, 1 - b][1]
        if (d1 >= c1 or _equal(d1, c1)) and (d2 >= c2 or _equal(d2, c2)):
            out.append((a, b))
    return out


def find_social_optimum(gm: GameMatrix) -> list[Cell]:
    """All cells of minimum social cost (ties are kept)."""
    best = min(gm.social.values())
    return [c for c in CELLS if _equal(gm.social[c], best)]


def from_costs(costs: dict[Cell, tuple[float, float]], social: dict[Cell, float] | None = None,
               regions: tuple[str, str] = ("R1", "R2"), convention: str = "given") -> GameMatrix:
    """Matrix from explicit costs; social cost defaults to the sum of both."""
    missing = set(CELLS) - set(costs)
    if missing:
        raise DomainError(f"missing cells {sorted(missing)}", "costs")
    soc = social if social is not None else {c: sum(costs[c]) for c in CELLS}
    return GameMatrix(regions, convention, {c: tuple(costs[c]) for c in CELLS}, dict(soc))


__all__ = ["CELLS", "Convention", "GameMatrix", "find_nash_equilibria", "find_social_optimum",
           "from_costs", "game_matrix", "investment_share", "parse_convention", "regional_cost"]
