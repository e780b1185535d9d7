"""Formulation pieces shared by the centralized and regional models."""

from __future__ import annotations

from .netmodel import Generator, Network, Scenario
from .solver import ModelBuilder


def add_generator(b: ModelBuilder, net: Network, g: Generator, s: Scenario, tag: str = "") -> list[int]:
    """Add per-segment output variables of ``g`` in scenario ``s``.

    Segment costs are weighted by the scenario weight; the generation limits
    become one row on the segment sum.  Returns the segment variable indices.
    """
    segs = []
    for m, (width, mc) in enumerate(g.segments()):
        segs.append(b.var(f"{tag}pg[{s.id},{g.id},{m}]", 0.0, width, s.weight * mc))
    lo, hi = net.gen_limits(g, s)
    b.row([(j, 1.0) for j in segs], lo, hi, f"{tag}glim[{s.id},{g.id}]")
    return segs


def output(x, segs: list[int]) -> float:
    return float(sum(x[j] for j in segs))


def node_demand(net: Network, s: Scenario) -> dict[str, float]:
    out = {n.id: 0.0 for n in net.nodes}
    for d in net.loads:
        out[d.node] += net.demand(d, s)
    return out
