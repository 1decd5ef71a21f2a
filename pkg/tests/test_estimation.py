import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kgapprox.errors import EmptyValidatedSample
from kgapprox.estimation import (
    AcceptedEntry,
    GreedyValidator,
    ValidatedSample,
    estimate,
    estimate_grouped,
    validate_answer,
    validate_sample,
)
from kgapprox.kg_store import GeneratorSpec, KnowledgeGraph, bounded_region, generate_synthetic_kg
from kgapprox.oracle import score_candidates
from kgapprox.query import EngineConfig, FilterSpec, GroupSpec
from kgapprox.sampler import Sample, build_transition_model, stationary_distribution
from kgapprox.semantics import ExplicitTable

CFG = EngineConfig(n=3, tau=0.85, r=3)


def _context(g, p, anchor, qpred, target, cfg=CFG):
    region = bounded_region(g, anchor, cfg.n, target)
    sd = stationary_distribution(build_transition_model(g, p, region, qpred, cfg), cfg)
    return region, sd


def test_table2_validation(table2):
    g, p = table2
    region, sd = _context(g, p, "g", "product", {"Automobile"})
    by_name = {g.node(a).name: a for a in region.candidates}
    ok, s = validate_answer(g, p, region, "product", "g", by_name["KIA_K5"], sd, CFG)
    assert not ok and s == pytest.approx(0.82)
    ok, s = validate_answer(g, p, region, "product", "g", by_name["BMW_X6"], sd, CFG)
    assert ok and s == 1.0


def _three_path_graph():
    # greedy reaches t first through the high-pi hub h1 (score 0.7); the 0.9 route via h2 comes later
    nodes = [("a", "A", "S"), ("h1", "H1", "H"), ("h2", "H2", "H"), ("t", "T", "C"),
             ("l1", "L1", "L"), ("l2", "L2", "L"), ("l3", "L3", "L"), ("l4", "L4", "L")]
    edges = [("a", "x", "h1"), ("h1", "x", "t"), ("a", "y", "h2"), ("h2", "y", "t"),
             ("h1", "z", "l1"), ("h1", "z", "l2"), ("h1", "z", "l3"), ("h1", "z", "l4"), ("t", "z", "l4")]
    p = ExplicitTable({("x", "q"): 0.7, ("y", "q"): 0.9, ("z", "q"): 1.0})
    return KnowledgeGraph.from_records(nodes, edges), p


@pytest.mark.parametrize("r, accepted", [(1, False), (3, True)])
def test_repeat_factor_finds_better_path(r, accepted):
    g, p = _three_path_graph()
    cfg = EngineConfig(n=2, r=r)
    region, sd = _context(g, p, "a", "q", {"C"}, cfg)
    ok, s = validate_answer(g, p, region, "q", "a", "t", sd, cfg)
    assert ok is accepted
    assert s == pytest.approx(0.9 if accepted else 0.7)
    _, best = score_candidates(g, p, "a", "q", {"C"}, 2)
    assert best["t"].score == pytest.approx(0.9)


def _judge(g, p, region, sd, cfg=CFG):
    v = GreedyValidator(g, p, region, "product", sd, cfg)
    calls = []

    def judge(a):
        calls.append(a)
        s = v.similarity(a)
        return s >= cfg.tau, s
    return judge, calls


def test_validate_sample_table2(table2):
    g, p = table2
    region, sd = _context(g, p, "g", "product", {"Automobile"})
    judge, calls = _judge(g, p, region, sd)
    s = Sample(region.candidates + region.candidates, (0.25,) * 8)
    vs = validate_sample(s, (), judge, lambda a: g.node(a).attrs)
    assert vs.rejected_count == 2 and vs.basis_size == 6 and vs.sample_size == 8
    assert {g.node(e.answer).name for e in vs.accepted} == {"BMW_X6", "BMW_320", "Audi_TT"}
    assert sorted(calls) == sorted(region.candidates)  # duplicates share one verdict


def test_validate_sample_all_correct_and_filters(table2):
    g, p = table2
    region, sd = _context(g, p, "g", "product", {"Automobile"})
    judge, _ = _judge(g, p, region, sd)
    good = [a for a in region.candidates if g.node(a).name != "KIA_K5"]
    vs = validate_sample(Sample(tuple(good), (1 / 3,) * 3), (), judge, lambda a: g.node(a).attrs)
    assert vs.rejected_count == 0
    flt = (FilterSpec("fuel_economy", 25, 30),)
    vs = validate_sample(Sample(region.candidates, (0.25,) * 4), flt, judge, lambda a: g.node(a).attrs)
    assert {g.node(e.answer).name for e in vs.accepted} == {"BMW_320", "Audi_TT"}
    assert all(25 <= e.attrs["fuel_economy"] <= 30 for e in vs.accepted)


def vsample(entries, rejected=0):
    return ValidatedSample(tuple(AcceptedEntry(f"a{i}", pr, 1.0, {} if v is None else {"x": v})
                                 for i, (v, pr) in enumerate(entries)), rejected)


def test_estimators_by_hand():
    vs = vsample([(10.0, 0.5), (20.0, 0.25)])
    assert estimate(vs, "count").value == 3.0
    assert estimate(vs, "sum", "x").value == 50.0
    assert estimate(vs, "avg", "x").value == pytest.approx(100 / 6)
    assert estimate(vs, "max", "x").value == 20.0
    assert estimate(vs, "min", "x").value == 10.0
    assert estimate(vsample([(1.0, 1.0)]), "count").value == 1.0


def test_rejected_draws_stay_in_denominator():
    vs = vsample([(10.0, 0.5), (20.0, 0.25)], rejected=2)
    assert estimate(vs, "count").value == 6 / 4
    assert estimate(vs, "sum", "x").value == 100 / 4
    assert estimate(vs, "avg", "x").value == pytest.approx(100 / 6)


def test_missing_attribute_policy():
    vs = vsample([(10.0, 0.5), (None, 0.25)])
    assert estimate(vs, "count").value == 3.0
    assert estimate(vs, "sum", "x").value == 10.0
    assert estimate(vs, "avg", "x").value == 10.0
    assert estimate(vs, "sum", "x").missing_attr == 1


@pytest.mark.parametrize("func", ["avg", "max", "min"])
def test_empty_basis(func):
    with pytest.raises(EmptyValidatedSample):
        estimate(vsample([], rejected=3), func, "x")
    assert estimate(vsample([], rejected=3), "count").value == 0.0


def test_grouped_single_group_equals_ungrouped():
    vs = vsample([(10.0, 0.5), (20.0, 0.25), (12.0, 0.1)])
    g = estimate_grouped(vs, "sum", "x", GroupSpec("x", (0.0, 100.0)))
    assert g.per_group["[0, 100)"].value == pytest.approx(estimate(vs, "sum", "x").value)


def test_grouped_buckets_partition():
    vs = vsample([(10.0, 0.5), (20.0, 0.25), (30.0, 0.5), (40.0, 0.2)])
    g = estimate_grouped(vs, "count", None, GroupSpec("x", (0.0, 25.0, 50.0)))
    assert set(g.per_group) == {"[0, 25)", "[25, 50)"}
    assert g.per_group["[0, 25)"].basis_size == 2 and g.per_group["[25, 50)"].basis_size == 2
    total = sum(pe.value for pe in g.per_group.values())
    assert total == pytest.approx(estimate(vs, "count").value)


def test_grouped_categorical():
    entries = [AcceptedEntry(f"c{i}", 0.25, 1.0, {"country": float(i % 2)}) for i in range(4)]
    g = estimate_grouped(ValidatedSample(tuple(entries), 0), "count", None, GroupSpec("country"))
    assert set(g.per_group) == {"0", "1"}
    assert all(pe.value == 2.0 for pe in g.per_group.values())


@given(st.lists(st.tuples(st.floats(0.1, 100), st.floats(0.01, 1.0)), min_size=1, max_size=20),
       st.integers(0, 5), st.floats(0.1, 50))
def test_scale_equivariance(entries, rejected, c):
    vs = vsample(entries, rejected)
    scaled = vsample([(v * c, pr) for v, pr in entries], rejected)
    for func in ("sum", "avg"):
        assert estimate(scaled, func, "x").value == pytest.approx(c * estimate(vs, func, "x").value, rel=1e-9)
    assert estimate(scaled, "count").value == estimate(vs, "count").value


def _random_graph(seed, nodes=40, edges=90):
    spec = GeneratorSpec(node_types={"A": nodes // 2, "B": nodes - nodes // 2},
                         predicates={"p1": 1.0, "p2": 0.95, "p3": 0.8, "p4": 0.6, "p5": 0.2},
                         edge_count=edges, multiplicity_cap=2)
    g = generate_synthetic_kg(spec, seed)
    p = ExplicitTable({(k, "q"): v for k, v in spec.predicates.items()}, ["q"])
    return g, p


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 100_000), r=st.integers(1, 3))
def test_monotone_r_and_no_false_positives(seed, r):
    g, p = _random_graph(seed)
    cfg = EngineConfig(n=2, tau=0.85, r=r)
    region = bounded_region(g, "n0", 2, {"B"})
    if not region.candidates:
        return
    sd = stationary_distribution(build_transition_model(g, p, region, "q", cfg), cfg)
    _, best = score_candidates(g, p, "n0", "q", {"B"}, 2)
    lo = GreedyValidator(g, p, region, "q", sd, cfg)
    hi = GreedyValidator(g, p, region, "q", sd, cfg.replace(r=r + 1))
    for a in region.candidates:
        s_lo, s_hi = lo.similarity(a), hi.similarity(a)
        assert s_lo <= best[a].score + 1e-12
        if s_lo >= cfg.tau:
            assert s_hi >= cfg.tau
            assert best[a].score >= cfg.tau
