"""Exhaustive baseline: enumerate every simple path up to ``n`` hops, score
candidates exactly and aggregate over the tau-relevant answers.

Exponential in ``n``; intended as the ground truth for tests and benches.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .errors import EmptyAnswerSet
from .kg_store import BoundedRegion, KnowledgeGraph, NodeId, bounded_region, resolve_specific_node
from .query import AggregateQuery, EngineConfig, FilterSpec, GroupSpec, QueryGraph
from .semantics import MatchPath, ScoredAnswer, SimilarityProvider, predicate_similarity


@dataclass(frozen=True)
class CandidateSet:
    region: BoundedRegion | None
    scored: tuple[ScoredAnswer, ...]
    correct: tuple[ScoredAnswer, ...]
    attrs: Mapping[NodeId, Mapping[str, float]] = field(repr=False, default_factory=dict)

    @property
    def correct_ids(self) -> frozenset[NodeId]:
        return frozenset(sa.answer for sa in self.correct)

    def similarity(self, answer: NodeId) -> float:
        for sa in self.scored:
            if sa.answer == answer:
                return sa.similarity
        return 0.0


@dataclass(frozen=True)
class ExactResult:
    value: float | None
    answer_count: int
    per_group: Mapping[str, tuple[float, int]] | None = None
    missing_attr: int = 0

    def to_dict(self) -> dict:
        out = {"value": self.value, "answer_count": self.answer_count, "missing_attr": self.missing_attr}
        if self.per_group is not None:
            out["groups"] = {k: {"value": v, "count": c} for k, (v, c) in sorted(self.per_group.items())}
        return out


def score_candidates(
    g: KnowledgeGraph,
    p: SimilarityProvider,
    anchor: NodeId,
    predicate: str,
    target_types: Iterable[str],
    n: int,
) -> tuple[BoundedRegion, dict[NodeId, MatchPath]]:
    """Best path (by score, then length, then edge ids) to every candidate."""
    region = bounded_region(g, anchor, n, target_types)
    wanted = set(region.candidates)
    log_sim: dict[str, float] = {}
    best: dict[NodeId, MatchPath] = {}

    def log_of(pred: str) -> float:
        if pred not in log_sim:
            log_sim[pred] = math.log(predicate_similarity(p, pred, predicate))
        return log_sim[pred]

    on_path = {anchor}
    edge_stack: list[int] = []

    def dfs(u: NodeId, log_total: float) -> None:
        depth = len(edge_stack)
        if depth and u in wanted:
            mp = MatchPath(u, tuple(edge_stack), min(1.0, math.exp(log_total / depth)))
            cur = best.get(u)
            if cur is None or mp.sort_key() < cur.sort_key():
                best[u] = mp
        if depth == n:
            return
        for eid, v in g.adjacency[u]:
            if v in on_path:
                continue
            on_path.add(v)
            edge_stack.append(eid)
            dfs(v, log_total + log_of(g.edge(eid).predicate))
            edge_stack.pop()
            on_path.discard(v)

    dfs(anchor, 0.0)
    return region, best


def enumerate_exact(
    g: KnowledgeGraph, p: SimilarityProvider, q: QueryGraph, cfg: EngineConfig
) -> CandidateSet:
    """Exact similarities for a single-hop query."""
    if not q.is_simple:
        raise ValueError("enumerate_exact takes a single-hop query; use exact_answers for chains")
    anchor = resolve_specific_node(g, q.specific_name, q.specific_types)
    region, best = score_candidates(g, p, anchor, q.predicate, q.target_types, cfg.n)
    scored = tuple(ScoredAnswer(a, best[a].score, best[a]) for a in region.candidates if a in best)
    correct = tuple(sa for sa in scored if sa.similarity >= cfg.tau)
    return CandidateSet(region, scored, correct, _attrs_of(g, scored))


def _attrs_of(g: KnowledgeGraph, scored: Sequence[ScoredAnswer]):
    return {sa.answer: g.node(sa.answer).attrs for sa in scored}


def exact_chain(
    g: KnowledgeGraph, p: SimilarityProvider, q: QueryGraph, cfg: EngineConfig
) -> CandidateSet:
    """Stage-by-stage exact answers of a path query.

    An answer is correct when some chain of stage matches reaches it with
    every stage score >= tau; its similarity is the best such chain's
    weakest stage score.
    """
    anchor = resolve_specific_node(g, q.specific_name, q.specific_types)
    frontier: dict[NodeId, float] = {anchor: 1.0}
    scored: dict[NodeId, float] = {}
    first_region = None
    for depth, hop in enumerate(q.hops):
        last = depth == len(q.hops) - 1
        nxt: dict[NodeId, float] = {}
        scored = {}
        for src in sorted(frontier):
            region, best = score_candidates(g, p, src, hop.predicate, hop.types, cfg.n)
            if first_region is None:
                first_region = region
            for node, mp in best.items():
                score = min(frontier[src], mp.score)
                if score > scored.get(node, -1.0):
                    scored[node] = score
                if mp.score >= cfg.tau and score > nxt.get(node, -1.0):
                    nxt[node] = score
        if not last:
            frontier = nxt
    answers = tuple(ScoredAnswer(a, s, None) for a, s in sorted(scored.items()))
    correct = tuple(sa for sa in answers if sa.similarity >= cfg.tau)
    return CandidateSet(first_region if q.is_simple else None, answers, correct, _attrs_of(g, answers))


def exact_candidates(
    g: KnowledgeGraph, p: SimilarityProvider, q: AggregateQuery, cfg: EngineConfig | None = None
) -> CandidateSet:
    """Exact candidate set of any query shape; composites intersect their parts."""
    cfg = cfg or q.config
    parts = []
    for sq in q.subqueries:
        parts.append(enumerate_exact(g, p, sq, cfg) if sq.is_simple else exact_chain(g, p, sq, cfg))
    if len(parts) == 1:
        return parts[0]
    sims: dict[NodeId, float] = {sa.answer: sa.similarity for sa in parts[0].scored}
    for part in parts[1:]:
        other = {sa.answer: sa.similarity for sa in part.scored}
        sims = {a: min(s, other[a]) for a, s in sims.items() if a in other}
    correct_ids = set.intersection(*(set(part.correct_ids) for part in parts))
    scored = tuple(ScoredAnswer(a, s, None) for a, s in sorted(sims.items()))
    correct = tuple(sa for sa in scored if sa.answer in correct_ids)
    return CandidateSet(None, scored, correct, _attrs_of(g, scored))


def _aggregate(func: str, values: Sequence[float]) -> float:
    if func == "count":
        return float(len(values))
    if func == "sum":
        return math.fsum(values)
    if not values:
        raise EmptyAnswerSet(f"{func.upper()} over an empty answer set")
    if func == "avg":
        return math.fsum(values) / len(values)
    if func == "max":
        return max(values)
    if func == "min":
        return min(values)
    raise ValueError(func)


def exact_aggregate(
    c: CandidateSet,
    func: str,
    attr: str | None = None,
    filters: Sequence[FilterSpec] = (),
    group_by: GroupSpec | None = None,
) -> ExactResult:
    """Apply filters and ``func`` over the correct answers."""
    kept = [sa.answer for sa in c.correct if all(f.admits(c.attrs[sa.answer]) for f in filters)]
    missing = 0
    if func == "count":
        values = [1.0] * len(kept)
    else:
        values = []
        for a in kept:
            v = c.attrs[a].get(attr)
            if v is None:
                missing += 1
            else:
                values.append(v)

    per_group = None
    if group_by is not None:
        buckets: dict[str, list[float]] = {}
        for a in kept:
            key = group_by.key(c.attrs[a])
            v = 1.0 if func == "count" else c.attrs[a].get(attr)
            if key is None or v is None:
                continue
            buckets.setdefault(key, []).append(v)
        per_group = {k: (_aggregate(func, vs), len(vs)) for k, vs in sorted(buckets.items())}
        overall = _aggregate(func, values) if values or func in ("count", "sum") else None
        return ExactResult(overall, len(kept), per_group, missing)

    return ExactResult(_aggregate(func, values), len(kept), None, missing)


def exact_query(
    g: KnowledgeGraph, p: SimilarityProvider, q: AggregateQuery, cfg: EngineConfig | None = None
) -> ExactResult:
    c = exact_candidates(g, p, q, cfg)
    return exact_aggregate(c, q.func, q.attr, q.filters, q.group_by)
