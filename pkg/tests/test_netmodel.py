import json
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridcoord.errors import CaseParseError, CaseReferenceError, DomainError
from gridcoord.netmodel import (ExistingLine, Generator, Load, Network, Node, Scenario, annuity_factor, incidence,
                                load_case, network_from_dict, network_to_dict, save_case, validate)
from netgen import random_network
from oracles import UnionFind, annuity_exact


@pytest.fixture
def case_dict(two_region_path):
    return json.loads(two_region_path.read_text())


def test_two_region_case_structure(two_region):
    net = two_region
    assert net.regions == ["R1", "R2"]
    assert len(net.generators) == 2 and len(net.loads) == 2
    assert len(net.existing_lines) == 1 and len(net.candidate_lines) == 1
    assert net.is_shared(net.existing_lines[0]) and net.is_shared(net.candidate_lines[0])
    g1 = next(g for g in net.generators if g.node == "n1")
    assert g1.cost_curve == ((1800.0, 50.0), (3000.0, 200.0))
    assert net.existing_lines[0].reactance == pytest.approx(9 * net.candidate_lines[0].reactance)


def test_two_region_validates_clean(two_region):
    rep = validate(two_region)
    assert rep.ok and not rep.violations


def test_empty_regions_is_domain_error(case_dict):
    case_dict["regions"] = []
    with pytest.raises(DomainError, match="regions"):
        network_from_dict(case_dict)


def test_unknown_node_reference(case_dict):
    case_dict["candidate_lines"][0]["to"] = "nowhere"
    with pytest.raises(CaseReferenceError, match="candidate_lines\\[0\\].to_node"):
        network_from_dict(case_dict)


def test_malformed_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(CaseParseError, match="bad.json"):
        load_case(p)


def test_missing_file_names_path(tmp_path):
    with pytest.raises(CaseParseError, match="missing.json"):
        load_case(tmp_path / "missing.json")


def test_pmin_above_pmax_names_generator(two_region):
    g = two_region.generators[0]
    bad = Generator(g.id, g.node, g.cost_curve, p_min=500.0, p_max=100.0)
    net = Network(two_region.regions, two_region.nodes, [bad, two_region.generators[1]], two_region.loads,
                  two_region.existing_lines, two_region.candidate_lines, two_region.scenarios, 0.1)
    rep = validate(net)
    assert len(rep.violations) == 1
    assert rep.violations[0].path == "generators[0]"


def test_nonconvex_cost_rejected(two_region):
    g = two_region.generators[0]
    bad = Generator(g.id, g.node, ((100.0, 50.0), (200.0, 10.0)), 0.0, 200.0)
    net = Network(two_region.regions, two_region.nodes, [bad], [], [], [], two_region.scenarios, 0.1)
    assert any("convex" in v.message for v in validate(net).violations)


def _islanded():
    nodes = [Node("a", "R"), Node("b", "R"), Node("c", "R")]
    gens = [Generator("g", "a", ((100.0, 1.0),), 0.0, 100.0)]
    loads = [Load("d", "c", 10.0)]
    lines = [ExistingLine("h", "a", "b", 0.1, 50.0)]
    return Network(["R"], nodes, gens, loads, lines, [], [Scenario("s", 1.0)], 0.1)


def test_islanded_loaded_node_warns():
    net = _islanded()
    rep = validate(net)
    assert rep.ok
    uf = UnionFind([n.id for n in net.nodes])
    for h in net.existing_lines:
        uf.union(h.from_node, h.to_node)
    isolated = {n for g in uf.groups() if len(g) < max(len(x) for x in uf.groups()) for n in g}
    flagged = {w.message.split("'")[1] for w in rep.warnings if "disconnected" in w.message}
    assert flagged == isolated == {"c"}
    assert any("carries load" in w.message for w in rep.warnings)


def test_annuity_identities():
    assert annuity_factor(0.1, 1) == pytest.approx(1.1, rel=1e-15)
    assert annuity_factor(0.05, 1e6) == pytest.approx(0.05, abs=1e-9)


def test_annuity_exact_r01_t10():
    exact = annuity_exact(Fraction(1, 10), 10)
    assert annuity_factor(0.1, 10) == pytest.approx(float(exact), rel=1e-14)
    assert annuity_factor(0.1, 10) == pytest.approx(0.16274539488251152, rel=1e-14)


@pytest.mark.parametrize("r,T", [(0.0, 5), (-0.1, 5), (0.1, 0.5)])
def test_annuity_domain(r, T):
    with pytest.raises(DomainError):
        annuity_factor(r, T)


@given(st.floats(1e-6, 0.3), st.integers(1, 100))
def test_annuity_bounds_and_monotone(r, T):
    f = annuity_factor(r, T)
    assert r < f <= (1 + r) * (1 + 1e-12)
    assert annuity_factor(r, T + 1) < f


def test_incidence_two_region(two_region):
    A = incidence(two_region)
    assert A.shape == (2, 2)
    for col in A.T:
        assert sorted(col) == [-1.0, 1.0]


def test_incidence_single_line():
    net = Network(["R"], [Node("1", "R"), Node("2", "R")], [], [], [ExistingLine("h", "1", "2", 0.1, 1.0)], [],
                  [Scenario("s", 1.0)], 0.1)
    assert incidence(net)[:, 0].tolist() == [1.0, -1.0]


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_incidence_columns_sum_to_zero(seed):
    A = incidence(random_network(seed))
    assert np.all(A.sum(axis=0) == 0)
    assert np.all((A == 1).sum(axis=0) == 1) and np.all((A == -1).sum(axis=0) == 1)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_round_trip(tmp_path_factory, seed):
    net = random_network(seed)
    p = tmp_path_factory.mktemp("rt") / "case.json"
    save_case(net, p)
    back = load_case(p)
    assert network_to_dict(back) == network_to_dict(net)


def test_bundled_cases_load(case_dir):
    for p in sorted(case_dir.glob("*.json")):
        net = load_case(p)
        assert validate(net).ok, p
        assert all(math.isfinite(net.annualized_cost(k)) for k in net.candidate_lines)
