"""Correctness validation of sampled answers and Horvitz-Thompson estimation."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import EmptyValidatedSample
from .kg_store import BoundedRegion, KnowledgeGraph, NodeId
from .query import EngineConfig, FilterSpec, GroupSpec
from .sampler import Sample, StationaryDistribution
from .semantics import SimilarityProvider, predicate_similarity


class GreedyValidator:
    """Best-first enumeration of simple paths from the anchor of one region.

    Partial paths are expanded in order of the stationary probability of
    their end node (highest first, ties by the node-id sequence). The first
    ``r`` paths that end at an answer are its evidence; its similarity is the
    best score among them. One traversal is shared by all answers, which is
    equivalent to a separate search per answer because a search for one
    answer pops the other paths in the same order.
    """

    def __init__(
        self,
        g: KnowledgeGraph,
        p: SimilarityProvider,
        region: BoundedRegion,
        query_predicate: str,
        sd: StationaryDistribution,
        cfg: EngineConfig,
    ) -> None:
        self.g = g
        self.region = region
        self.r = cfg.r
        self.n = region.hop_limit
        self._pi = sd.pi
        self._log_sim: dict[str, float] = {}
        self._p = p
        self._qpred = query_predicate
        self._found: dict[NodeId, list[float]] = {}
        # (-pi(end), node path, edge path, summed log similarity)
        self._heap: list[tuple[float, tuple[NodeId, ...], tuple[int, ...], float]] = [
            (-self._pi.get(region.anchor, 0.0), (region.anchor,), (), 0.0)
        ]
        self.paths_examined = 0

    def _log(self, pred: str) -> float:
        if pred not in self._log_sim:
            self._log_sim[pred] = math.log(predicate_similarity(self._p, pred, self._qpred))
        return self._log_sim[pred]

    def _advance(self) -> None:
        _, nodes, edges, log_total = heapq.heappop(self._heap)
        self.paths_examined += 1
        end = nodes[-1]
        if edges:
            found = self._found.setdefault(end, [])
            if len(found) < self.r:
                found.append(min(1.0, math.exp(log_total / len(edges))))
        if len(edges) == self.n:
            return
        members = self.region.members
        for eid, v in self.g.adjacency[end]:
            if v not in members or v in nodes:
                continue
            step = log_total + self._log(self.g.edge(eid).predicate)
            heapq.heappush(self._heap, (-self._pi.get(v, 0.0), nodes + (v,), edges + (eid,), step))

    def similarity(self, answer: NodeId) -> float:
        """Best score among the first ``r`` greedy paths to ``answer`` (0 if none)."""
        if answer not in self.region.members or answer == self.region.anchor:
            return 0.0
        while len(self._found.get(answer, ())) < self.r and self._heap:
            self._advance()
        return max(self._found.get(answer, ()), default=0.0)


def validate_answer(
    g: KnowledgeGraph,
    p: SimilarityProvider,
    region: BoundedRegion,
    query_predicate: str,
    anchor: NodeId,
    answer: NodeId,
    sd: StationaryDistribution,
    cfg: EngineConfig,
) -> tuple[bool, float]:
    """One-off validation; sessions should share a :class:`GreedyValidator`."""
    if anchor != region.anchor:
        raise ValueError("anchor does not match the region")
    s = GreedyValidator(g, p, region, query_predicate, sd, cfg).similarity(answer)
    return s >= cfg.tau, s


# -- validated samples -------------------------------------------------------------


@dataclass(frozen=True)
class AcceptedEntry:
    answer: NodeId
    prob: float
    similarity: float
    attrs: Mapping[str, float] = field(repr=False)


@dataclass(frozen=True)
class ValidatedSample:
    """Accepted draws plus the count of rejected ones.

    ``sample_size`` counts every draw, accepted or not; the estimators
    divide by it.
    """

    accepted: tuple[AcceptedEntry, ...]
    rejected_count: int
    validation_paths_examined: int = 0

    @property
    def sample_size(self) -> int:
        return len(self.accepted) + self.rejected_count

    @property
    def basis_size(self) -> int:
        return len(self.accepted)

    def __add__(self, other: "ValidatedSample") -> "ValidatedSample":
        return ValidatedSample(
            self.accepted + other.accepted,
            self.rejected_count + other.rejected_count,
            self.validation_paths_examined + other.validation_paths_examined,
        )

    @classmethod
    def pool(cls, parts: Sequence["ValidatedSample"]) -> "ValidatedSample":
        out = cls((), 0, 0)
        for part in parts:
            out = out + part
        return out


def validate_sample(
    s: Sample,
    filters: Sequence[FilterSpec],
    judge: Callable[[NodeId], tuple[bool, float]],
    attrs_of: Callable[[NodeId], Mapping[str, float]],
) -> ValidatedSample:
    """Split ``s`` into accepted entries and a rejected count.

    ``judge`` returns (semantically correct, similarity) and is called once
    per distinct answer; filters then act on the answer's attributes.
    """
    verdicts: dict[NodeId, tuple[bool, float]] = {}
    accepted: list[AcceptedEntry] = []
    rejected = 0
    for answer, prob in zip(s.answers, s.probs):
        if answer not in verdicts:
            ok, sim = judge(answer)
            if ok and not all(f.admits(attrs_of(answer)) for f in filters):
                ok = False
            verdicts[answer] = (ok, sim)
        ok, sim = verdicts[answer]
        if ok:
            accepted.append(AcceptedEntry(answer, prob, sim, attrs_of(answer)))
        else:
            rejected += 1
    return ValidatedSample(tuple(accepted), rejected)


# -- estimators ----------------------------------------------------------------------


@dataclass(frozen=True)
class PointEstimate:
    func: str
    value: float
    basis_size: int
    per_group: Mapping[str, "PointEstimate"] | None = None
    missing_attr: int = 0


def _arrays(vs: ValidatedSample, attr: str | None, keep=None):
    """Inverse-probability weights and attribute values per accepted entry."""
    w = np.array([1.0 / e.prob for e in vs.accepted])
    vals = np.array([e.attrs.get(attr, math.nan) if attr else 1.0 for e in vs.accepted])
    has = ~np.isnan(vals)
    if keep is not None:
        has &= keep
        w = np.where(keep, w, 0.0)
    return w, np.where(has, vals, 0.0), has


def estimate(vs: ValidatedSample, func: str, attr: str | None = None) -> PointEstimate:
    """Horvitz-Thompson COUNT/SUM, ratio AVG, sample extreme for MAX/MIN.

    Rejected draws count in the sample size and contribute zero.
    """
    return _estimate(vs, func, attr, None)


def _estimate(vs: ValidatedSample, func: str, attr: str | None, keep) -> PointEstimate:
    n = vs.sample_size
    if n == 0:
        raise EmptyValidatedSample("sample is empty")
    w, vals, has = _arrays(vs, attr if func != "count" else None, keep)
    basis = int(np.count_nonzero(keep)) if keep is not None else vs.basis_size
    missing = basis - int(np.count_nonzero(has)) if func != "count" else 0
    if func == "count":
        return PointEstimate(func, float(w.sum()) / n, basis)
    if func == "sum":
        return PointEstimate(func, float((w * vals)[has].sum()) / n, basis, missing_attr=missing)
    if not has.any():
        raise EmptyValidatedSample(f"{func.upper()} needs at least one accepted answer with {attr!r}")
    if func == "avg":
        value = float((w * vals)[has].sum() / w[has].sum())
    elif func == "max":
        value = float(vals[has].max())
    elif func == "min":
        value = float(vals[has].min())
    else:
        raise ValueError(f"unknown aggregate {func!r}")
    return PointEstimate(func, value, basis, missing_attr=missing)


def group_keys(vs: ValidatedSample, gs: GroupSpec) -> list[str | None]:
    return [gs.key(e.attrs) for e in vs.accepted]


def estimate_grouped(
    vs: ValidatedSample, func: str, attr: str | None, gs: GroupSpec
) -> PointEstimate:
    """Per-group estimates over one shared sample.

    Entries outside a group contribute zero to it, so each group's COUNT and
    SUM stay unbiased for that group's total.
    """
    keys = group_keys(vs, gs)
    per_group: dict[str, PointEstimate] = {}
    for key in sorted({k for k in keys if k is not None}):
        mask = np.array([k == key for k in keys])
        try:
            per_group[key] = _estimate(vs, func, attr, mask)
        except EmptyValidatedSample:
            continue
    try:
        overall = estimate(vs, func, attr)
    except EmptyValidatedSample:
        overall = PointEstimate(func, math.nan, vs.basis_size)
    return PointEstimate(func, overall.value, overall.basis_size, per_group, overall.missing_attr)


# -- resampling support --------------------------------------------------------------


def contribution_arrays(vs: ValidatedSample, func: str, attr: str | None, keep=None):
    """Per-draw numerator and denominator contributions, rejected draws as zeros.

    For COUNT/SUM an estimate is ``num.sum() / size``; for AVG it is
    ``num.sum() / den.sum()``.
    """
    w, vals, has = _arrays(vs, attr if func != "count" else None, keep)
    if func == "count":
        num = w.copy()
        den = np.ones_like(w)
    else:
        num = np.where(has, w * vals, 0.0)
        den = np.where(has, w, 0.0)
    pad = np.zeros(vs.rejected_count)
    return np.concatenate([num, pad]), np.concatenate([den, pad])
