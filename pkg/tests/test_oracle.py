import dataclasses

import pytest

from kgapprox.errors import EmptyAnswerSet
from kgapprox.kg_store import KnowledgeGraph
from kgapprox.oracle import CandidateSet, enumerate_exact, exact_aggregate, exact_candidates, exact_query
from kgapprox.query import EngineConfig, FilterSpec, parse_query
from kgapprox.semantics import ExplicitTable, ScoredAnswer


def test_table2_correct_set(table2, query_at):
    g, p = table2
    q = query_at("table2/query.json")
    c = enumerate_exact(g, p, q.subqueries[0], q.config)
    names = {g.node(sa.answer).name: sa.similarity for sa in c.scored}
    assert names["KIA_K5"] == pytest.approx(0.82, abs=1e-9)
    assert names["BMW_X6"] == 1.0
    assert names["Audi_TT"] == pytest.approx(0.8909545, abs=1e-6)
    assert {g.node(a).name for a in c.correct_ids} == {"BMW_X6", "BMW_320", "Audi_TT"}


def test_fig3_scored_set(fig3, query_at):
    g, p = fig3
    q = query_at("fig3/query.json")
    c = enumerate_exact(g, p, q.subqueries[0], q.config)
    assert {sa.answer for sa in c.scored} == {"u_3", "u_4", "u_6"}


def test_absent_target_type(fig3):
    g, p = fig3
    q = parse_query({"shape": "simple", "func": "count", "subqueries": [
        {"specific": {"name": "Germany", "types": ["Country"]}, "hops": [{"types": ["Planet"], "predicate": "product"}]}]})
    c = enumerate_exact(g, p, q.subqueries[0], q.config)
    assert c.scored == () and c.correct == ()
    assert exact_query(g, p, q).value == 0.0


def _cs(values):
    scored = tuple(ScoredAnswer(f"a{i}", 1.0, None) for i in range(len(values)))
    attrs = {f"a{i}": ({} if v is None else {"price": v}) for i, v in enumerate(values)}
    return CandidateSet(None, scored, scored, attrs)


def test_aggregates_by_hand():
    c = _cs([40000.0, 48144.0])
    assert exact_aggregate(c, "avg", "price").value == 44072.0
    assert exact_aggregate(c, "count").value == 2
    assert exact_aggregate(c, "sum", "price").value == 88144.0
    assert exact_aggregate(c, "max", "price").value == 48144.0


def test_filter_excluding_everything():
    c = _cs([10.0, 40.0])
    with pytest.raises(EmptyAnswerSet):
        exact_aggregate(c, "avg", "price", [FilterSpec("price", 25, 30)])
    assert exact_aggregate(c, "count", None, [FilterSpec("price", 25, 30)]).value == 0
    assert exact_aggregate(c, "sum", "price", [FilterSpec("price", 25, 30)]).value == 0


def test_missing_attr_counted():
    r = exact_aggregate(_cs([10.0, None]), "sum", "price")
    assert r.value == 10.0 and r.missing_attr == 1 and r.answer_count == 2


def test_fuel_filter_on_table2(table2, query_at):
    g, p = table2
    q = dataclasses.replace(query_at("table2/query.json"), func="avg", attr="fuel_economy",
                            filters=(FilterSpec("fuel_economy", 25, 30),))
    r = exact_query(g, p, q)
    assert r.answer_count == 2 and r.value == pytest.approx(27.5)


def test_chain_oracle(chain_kg, query_at):
    g, p = chain_kg
    c = exact_candidates(g, p, query_at("chain/query.json"))
    assert c.correct_ids == {"c1", "c2", "c3"}


def test_star_oracle(table2, query_at):
    g, p = table2
    c = exact_candidates(g, p, query_at("table2/star.json"))
    assert {g.node(a).name for a in c.correct_ids} == {"BMW_320"}


def test_grouped_counts(hub, query_at, hub_truth):
    g, p = hub
    r = exact_query(g, p, query_at("queries/q4_count_by_price.json"))
    assert sum(c for _, c in r.per_group.values()) == hub_truth["count"]


def test_monotone_tau(hub, query_at):
    g, p = hub
    q = query_at("queries/q1_count.json")
    sets = [exact_candidates(g, p, q, q.config.replace(tau=t)).correct_ids for t in (0.5, 0.7, 0.85, 0.95)]
    assert all(a >= b for a, b in zip(sets, sets[1:]))


def test_deterministic(hub, query_at):
    g, p = hub
    q = query_at("queries/q1_count.json")
    assert exact_candidates(g, p, q) == exact_candidates(g, p, q)


def test_best_path_over_all_simple_paths():
    # two routes to t; the longer one scores higher
    g = KnowledgeGraph.from_records(
        [("s", "S", "A"), ("m1", "M1", "B"), ("m2", "M2", "B"), ("t", "T", "C")],
        [("s", "lo", "t"), ("s", "hi", "m1"), ("m1", "hi", "m2"), ("m2", "hi", "t")],
    )
    p = ExplicitTable({("lo", "q"): 0.5, ("hi", "q"): 0.9})
    q = parse_query({"shape": "simple", "func": "count", "subqueries": [
        {"specific": {"name": "S", "types": ["A"]}, "hops": [{"types": ["C"], "predicate": "q"}]}]})
    c = enumerate_exact(g, p, q.subqueries[0], EngineConfig(n=3))
    assert c.scored[0].similarity == pytest.approx(0.9)
    assert c.scored[0].best_path.length == 3
