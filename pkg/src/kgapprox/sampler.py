"""Semantic-aware random walk: transition model, stationary distribution,
answer distribution and i.i.d. answer sampling (simple, chain, composite).
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import EmptyIntersection, IsolatedNodeWarning, NoCandidates
from .kg_store import BoundedRegion, KnowledgeGraph, NodeId, bounded_region
from .query import EngineConfig, QueryGraph
from .semantics import SimilarityProvider, predicate_similarity

log = logging.getLogger(__name__)

SELF_LOOP = -1  # edge id of the synthetic loop at the anchor


@dataclass(frozen=True)
class TransitionModel:
    region: BoundedRegion
    rows: Mapping[NodeId, tuple[tuple[NodeId, int, float], ...]]
    index: tuple[NodeId, ...]
    matrix: sp.csr_matrix = field(repr=False)
    self_loop_at_anchor: bool = True

    @property
    def anchor(self) -> NodeId:
        return self.region.anchor

    def position(self, node: NodeId) -> int:
        return self._positions[node]

    @property
    def _positions(self) -> dict[NodeId, int]:
        cache = self.__dict__.get("_pos_cache")
        if cache is None:
            cache = {nid: i for i, nid in enumerate(self.index)}
            object.__setattr__(self, "_pos_cache", cache)
        return cache


@dataclass(frozen=True)
class StationaryDistribution:
    pi: Mapping[NodeId, float]
    residual: float
    steps: int
    converged: bool
    vector: np.ndarray = field(repr=False, compare=False, default=None)


@dataclass(frozen=True)
class AnswerDistribution:
    answers: tuple[NodeId, ...]
    probs: np.ndarray = field(compare=False)
    model: TransitionModel | None = field(default=None, repr=False, compare=False)
    stationary: StationaryDistribution | None = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        if len(self.answers) != len(self.probs):
            raise ValueError("answers and probs differ in length")

    def prob_of(self, answer: NodeId) -> float:
        lookup = self.__dict__.get("_lookup")
        if lookup is None:
            lookup = dict(zip(self.answers, self.probs.tolist()))
            object.__setattr__(self, "_lookup", lookup)
        return lookup.get(answer, 0.0)

    def as_dict(self) -> dict[NodeId, float]:
        return dict(zip(self.answers, self.probs.tolist()))

    def __len__(self) -> int:
        return len(self.answers)


@dataclass(frozen=True)
class Sample:
    """Multiset of drawn answers with their sampling probabilities."""

    answers: tuple[NodeId, ...]
    probs: tuple[float, ...]
    stage_breakdown: Mapping[NodeId, int] | None = None

    @property
    def entries(self) -> list[tuple[NodeId, float]]:
        return list(zip(self.answers, self.probs))

    def __len__(self) -> int:
        return len(self.answers)

    def __add__(self, other: "Sample") -> "Sample":
        return Sample(self.answers + other.answers, self.probs + other.probs)


# -- transition model -------------------------------------------------------------


def build_transition_model(
    g: KnowledgeGraph,
    p: SimilarityProvider,
    region: BoundedRegion,
    query_predicate: str,
    cfg: EngineConfig,
) -> TransitionModel:
    """Row-normalised transitions proportional to predicate similarity.

    Only edges with both ends in ``region`` are used; the anchor carries an
    extra self-loop of weight ``p_ss`` before normalisation.
    """
    sims: dict[str, float] = {}
    index = tuple(sorted(region.members))
    pos = {nid: i for i, nid in enumerate(index)}
    rows: dict[NodeId, tuple[tuple[NodeId, int, float], ...]] = {}
    r_idx: list[int] = []
    c_idx: list[int] = []
    vals: list[float] = []
    for u in index:
        weighted: list[tuple[NodeId, int, float]] = []
        for eid, v in g.adjacency[u]:
            if v not in pos:
                continue
            pred = g.edge(eid).predicate
            if pred not in sims:
                sims[pred] = predicate_similarity(p, pred, query_predicate)
            weighted.append((v, eid, sims[pred]))
        if u == region.anchor:
            if not weighted:
                warnings.warn(f"anchor {u!r} has no in-region edges", IsolatedNodeWarning, stacklevel=2)
            weighted.append((u, SELF_LOOP, cfg.p_ss))
        elif not weighted:
            warnings.warn(f"node {u!r} has no in-region edges; dropped", IsolatedNodeWarning, stacklevel=2)
            continue
        total = sum(w for _, _, w in weighted)
        row = tuple((v, eid, w / total) for v, eid, w in weighted)
        rows[u] = row
        for v, _, prob in row:
            r_idx.append(pos[u])
            c_idx.append(pos[v])
            vals.append(prob)
    n = len(index)
    # duplicates (parallel edges) are summed by the constructor
    matrix = sp.csr_matrix((vals, (r_idx, c_idx)), shape=(n, n))
    return TransitionModel(region, rows, index, matrix)


def stationary_distribution(tm: TransitionModel, cfg: EngineConfig) -> StationaryDistribution:
    """Power iteration from the anchor.

    Iterates the lazy chain ``(I + P) / 2``, which has the same fixed point
    as ``P`` but cannot oscillate on bipartite regions. Stops once
    ``||pi P - pi||_1 <= pi_tol`` or after ``max_walk_steps`` updates.
    """
    n = len(tm.index)
    pi = np.zeros(n)
    pi[tm.position(tm.anchor)] = 1.0
    pt = tm.matrix.T.tocsr()
    steps = 0
    residual = float(np.abs(pt @ pi - pi).sum())
    while residual > cfg.pi_tol and steps < cfg.max_walk_steps:
        pi = 0.5 * (pi + pt @ pi)
        pi /= pi.sum()
        steps += 1
        residual = float(np.abs(pt @ pi - pi).sum())
    converged = residual <= cfg.pi_tol
    if not converged:
        log.warning("power iteration stopped at %d steps with residual %.3g", steps, residual)
    return StationaryDistribution(dict(zip(tm.index, pi.tolist())), residual, steps, converged, pi)


def extract_answer_distribution(
    sd: StationaryDistribution,
    region: BoundedRegion,
    target_types: Iterable[str],
    g: KnowledgeGraph,
    model: TransitionModel | None = None,
) -> AnswerDistribution:
    """Restrict ``pi`` to type-matching candidates and renormalise."""
    target = frozenset(target_types)
    answers = tuple(sorted(
        u for u in region.members if u != region.anchor and g.node(u).has_type(target)
    ))
    weights = np.array([sd.pi.get(u, 0.0) for u in answers])
    keep = weights > 0
    answers = tuple(a for a, k in zip(answers, keep) if k)
    weights = weights[keep]
    if not answers:
        raise NoCandidates(f"no candidate of types {sorted(target)} near {region.anchor!r}")
    return AnswerDistribution(answers, weights / weights.sum(), model, sd)


def answer_distribution(
    g: KnowledgeGraph,
    p: SimilarityProvider,
    anchor: NodeId,
    predicate: str,
    target_types: Iterable[str],
    cfg: EngineConfig,
) -> AnswerDistribution:
    """Region, transition model, stationary distribution and answer distribution in one call."""
    region = bounded_region(g, anchor, cfg.n, target_types)
    if region.candidate_count == 0:
        raise NoCandidates(f"no candidate of types {sorted(target_types)} near {anchor!r}")
    tm = build_transition_model(g, p, region, predicate, cfg)
    sd = stationary_distribution(tm, cfg)
    return extract_answer_distribution(sd, region, target_types, g, tm)


# -- drawing -------------------------------------------------------------------------


class RejectionWalker:
    """Walk with rejection on a transition model, reporting candidate visits.

    At each step a neighbour is proposed uniformly and accepted with its
    transition probability; non-candidate nodes are skipped when collecting.
    """

    def __init__(self, ad: AnswerDistribution, rng: np.random.Generator, burn_in: int | None = None):
        if ad.model is None:
            raise ValueError("walk backend needs an answer distribution built from a transition model")
        self.ad = ad
        self.model = ad.model
        self.rng = rng
        self.position = self.model.anchor
        self.steps = 0
        self.rejections = 0
        self._targets = set(ad.answers)
        if burn_in is None:
            burn_in = ad.stationary.steps if ad.stationary is not None else 0
        for _ in range(burn_in):
            self.step()

    def step(self) -> NodeId:
        row = self.model.rows[self.position]
        while True:
            v, _, prob = row[int(self.rng.integers(len(row)))]
            if self.rng.random() < prob:
                break
            self.rejections += 1
        self.position = v
        self.steps += 1
        return v

    def next_answer(self) -> NodeId:
        while True:
            v = self.step()
            if v in self._targets:
                return v


def draw_sample(
    ad: AnswerDistribution,
    size: int,
    rng: np.random.Generator,
    backend: str = "categorical",
    walker: RejectionWalker | None = None,
) -> Sample:
    """Draw ``size`` answers from ``ad``.

    ``categorical`` draws i.i.d. from the answer distribution. ``walk``
    continues a rejection walk (``walker`` if given, else a fresh one after
    burn-in) and keeps the candidate nodes it visits.
    """
    if size < 1:
        raise ValueError("sample size must be >= 1")
    if len(ad) == 0:
        raise NoCandidates("answer distribution is empty")
    if backend == "categorical":
        idx = rng.choice(len(ad.answers), size=size, p=ad.probs)
        answers = tuple(ad.answers[i] for i in idx)
        probs = tuple(float(ad.probs[i]) for i in idx)
        return Sample(answers, probs)
    if backend == "walk":
        walker = walker or RejectionWalker(ad, rng)
        answers = tuple(walker.next_answer() for _ in range(size))
        return Sample(answers, tuple(ad.prob_of(a) for a in answers))
    raise ValueError(f"unknown sampler backend {backend!r}")


# -- chains --------------------------------------------------------------------------


@dataclass(frozen=True)
class ChainDistribution:
    """Answer distribution of a path query, stage by stage.

    ``stages[k]`` maps each stage-``k`` source node to its weight and the
    answer distribution it spawns; ``final`` is the marginal over answers.
    """

    final: AnswerDistribution
    stages: tuple[Mapping[NodeId, tuple[float, AnswerDistribution]], ...]

    def pair_table(self) -> dict[tuple[NodeId, NodeId], float]:
        """Joint probability of every (last-stage source, answer) pair."""
        return {
            (src, ans): w * q
            for src, (w, ad) in self.stages[-1].items()
            for ans, q in zip(ad.answers, ad.probs.tolist())
        }


def chain_distribution(
    g: KnowledgeGraph, p: SimilarityProvider, anchor: NodeId, q: QueryGraph, cfg: EngineConfig
) -> ChainDistribution:
    """Two-stage (or k-stage) sampling frame for a path query.

    Each stage samples from every source's own semantic walk; sources whose
    region holds no candidates are skipped and the remaining mass is
    renormalised.
    """
    weights: dict[NodeId, float] = {anchor: 1.0}
    stages = []
    for depth, hop in enumerate(q.hops):
        stage: dict[NodeId, tuple[float, AnswerDistribution]] = {}
        for src in sorted(weights):
            try:
                ad = answer_distribution(g, p, src, hop.predicate, hop.types, cfg)
            except NoCandidates:
                continue
            stage[src] = (weights[src], ad)
        if not stage:
            raise NoCandidates(f"chain stage {depth + 1} has no candidates")
        kept = sum(w for w, _ in stage.values())
        stage = {src: (w / kept, ad) for src, (w, ad) in stage.items()}
        stages.append(stage)
        nxt: dict[NodeId, float] = {}
        for src, (w, ad) in stage.items():
            for ans, prob in zip(ad.answers, ad.probs.tolist()):
                nxt[ans] = nxt.get(ans, 0.0) + w * prob
        weights = nxt
    answers = tuple(sorted(weights))
    probs = np.array([weights[a] for a in answers])
    final = AnswerDistribution(answers, probs / probs.sum())
    return ChainDistribution(final, tuple(stages))


def chain_sample(
    g: KnowledgeGraph,
    p: SimilarityProvider,
    q: QueryGraph,
    size: int,
    cfg: EngineConfig,
    rng: np.random.Generator,
    anchor: NodeId | None = None,
    chain: ChainDistribution | None = None,
) -> Sample:
    """Stage-wise draws; each answer carries its accumulated marginal probability.

    Per-source draws use their own generator derived from one root seed and
    the source's position, so they are independent of evaluation order.
    """
    if chain is None:
        if anchor is None:
            from .kg_store import resolve_specific_node

            anchor = resolve_specific_node(g, q.specific_name, q.specific_types)
        chain = chain_distribution(g, p, anchor, q, cfg)
    # the last stage's source weights are already the marginal over sources
    # that spawn candidates, so earlier stages need not be redrawn
    stage = chain.stages[-1]
    sources = sorted(stage)
    weights = np.array([stage[s][0] for s in sources])
    root = int(rng.integers(2**62))
    picks = np.random.default_rng([root, 0]).choice(len(sources), size=size, p=weights / weights.sum())
    counts = np.bincount(picks, minlength=len(sources))
    answers: list[NodeId] = []
    breakdown: dict[NodeId, int] = {}
    for k, (src, c) in enumerate(zip(sources, counts.tolist())):
        if not c:
            continue
        breakdown[src] = c
        ad = stage[src][1]
        idx = np.random.default_rng([root, 1, k]).choice(len(ad.answers), size=c, p=ad.probs)
        answers.extend(ad.answers[i] for i in idx)
    order = np.random.default_rng([root, 2]).permutation(len(answers))
    drawn = tuple(answers[i] for i in order)
    return Sample(drawn, tuple(chain.final.prob_of(a) for a in drawn), breakdown)


# -- composites ----------------------------------------------------------------------


def intersect_distributions(ads: Sequence[AnswerDistribution]) -> AnswerDistribution:
    """Answers common to every distribution, weighted by the normalised product."""
    if len(ads) < 2:
        raise ValueError("need at least two distributions")
    common = set(ads[0].answers)
    for ad in ads[1:]:
        common &= set(ad.answers)
    if not common:
        raise EmptyIntersection("subqueries share no candidate answer")
    answers = tuple(sorted(common))
    probs = np.ones(len(answers))
    for ad in ads:
        probs *= np.array([ad.prob_of(a) for a in answers])
    return AnswerDistribution(answers, probs / probs.sum())


def intersect_samples(samples: Sequence[Sample]) -> Sample:
    """One entry per answer present in every sample.

    Each survivor's probability is the product of its per-sample
    probabilities, renormalised over the survivors.
    """
    if len(samples) < 2:
        raise ValueError("need at least two samples")
    per_sample = [dict(zip(s.answers, s.probs)) for s in samples]
    common = set(per_sample[0])
    for d in per_sample[1:]:
        common &= set(d)
    if not common:
        raise EmptyIntersection("samples share no answer")
    answers = tuple(sorted(common))
    raw = np.array([np.prod([d[a] for d in per_sample]) for a in answers])
    probs = raw / raw.sum()
    return Sample(answers, tuple(float(x) for x in probs))
