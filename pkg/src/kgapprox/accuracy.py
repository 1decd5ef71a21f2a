"""Confidence intervals, termination test, sample growth and the query driver."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from statistics import NormalDist
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from .errors import DomainError, EmptyValidatedSample, SessionExpired
from .estimation import (
    GreedyValidator,
    PointEstimate,
    ValidatedSample,
    contribution_arrays,
    estimate,
    estimate_grouped,
    group_keys,
    validate_sample,
)
from .kg_store import KnowledgeGraph, NodeId, resolve_specific_node
from .query import AggregateQuery, EngineConfig, GroupSpec, QueryGraph
from .sampler import (
    AnswerDistribution,
    ChainDistribution,
    RejectionWalker,
    Sample,
    answer_distribution,
    chain_distribution,
    draw_sample,
    intersect_distributions,
)
from .semantics import SimilarityProvider

EXTREME_FUNCS = ("max", "min")


def normal_critical(alpha: float) -> float:
    """Upper ``alpha/2`` quantile of the standard normal."""
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    return NormalDist().inv_cdf(1.0 - alpha / 2.0)


@dataclass(frozen=True)
class BootstrapStats:
    resample_estimates: np.ndarray
    mu: float
    sigma: float


def _resampled(num: np.ndarray, den: np.ndarray, func: str, B: int, size: int, rng) -> np.ndarray:
    # draws with equal contributions are interchangeable, so resample their
    # distinct values with multiplicity weights instead of every draw
    pairs, inverse = np.unique(np.column_stack([num, den]), axis=0, return_inverse=True)
    weights = np.bincount(inverse.ravel(), minlength=len(pairs)) / len(num)
    num, den = pairs[:, 0], pairs[:, 1]
    counts = rng.multinomial(size, weights, size=B).astype(float)
    if func in ("count", "sum"):
        return counts @ num / size
    if func == "avg":
        d = counts @ den
        out = np.full(B, np.nan)
        ok = d > 0
        out[ok] = (counts @ num)[ok] / d[ok]
        return out
    raise ValueError(f"no bootstrap for {func.upper()}")


def bootstrap_sigma(
    vs: ValidatedSample,
    func: str,
    attr: str | None,
    B: int,
    rng: np.random.Generator,
    resample_size: int | None = None,
    keep: np.ndarray | None = None,
) -> BootstrapStats:
    """Standard deviation of the estimator over ``B`` resamples of ``vs``.

    Resamples are drawn with replacement from every draw of the sample,
    rejected ones included, and reuse the stored validation results.
    ``resample_size`` defaults to the sample size. AVG resamples without
    any attribute-bearing entry are discarded.
    """
    if B < 2:
        raise ValueError("B must be >= 2")
    if vs.sample_size == 0:
        raise EmptyValidatedSample("sample is empty")
    num, den = contribution_arrays(vs, func, attr, keep)
    if func == "avg" and not den.any():
        raise EmptyValidatedSample(f"AVG needs at least one accepted answer with {attr!r}")
    est = _resampled(num, den, func, B, resample_size or vs.sample_size, rng)
    finite = est[np.isfinite(est)]
    if len(finite) < 2:
        return BootstrapStats(est, math.nan, math.inf)
    return BootstrapStats(est, float(finite.mean()), float(finite.std(ddof=1)))


def blb_moe(
    small_samples: Sequence[ValidatedSample],
    func: str,
    attr: str | None,
    alpha: float,
    B: int,
    rng: np.random.Generator,
    resample_size: int | None = None,
    group: tuple[GroupSpec, str] | None = None,
) -> tuple[float, list[float]]:
    """Bag of little bootstraps margin of error.

    Each small sample is resampled up to ``resample_size`` draws (default:
    the pooled size of all small samples), giving ``eps_i = z * sigma_i``;
    the result is the mean of the ``eps_i``. ``group`` restricts the
    estimator to one group's entries.
    """
    if not small_samples:
        raise ValueError("need at least one small sample")
    z = normal_critical(alpha)
    size = resample_size or sum(s.sample_size for s in small_samples)
    per: list[float] = []
    for i, s in enumerate(small_samples):
        keep = None
        if group is not None:
            gs, key = group
            keep = np.array([k == key for k in group_keys(s, gs)], dtype=bool)
        try:
            stats = bootstrap_sigma(s, func, attr, B, rng, size, keep)
        except EmptyValidatedSample as exc:
            raise EmptyValidatedSample(str(exc), index=i) from None
        per.append(z * stats.sigma)
    return float(np.mean(per)), per


def termination_threshold(v_hat: float, e_b: float) -> float:
    return v_hat * e_b / (1.0 + e_b)


def termination_met(v_hat: float, epsilon: float, e_b: float) -> bool:
    """Whether the margin of error guarantees relative error at most ``e_b``.

    Never true for a non-positive or undefined estimate.
    """
    if not (math.isfinite(v_hat) and v_hat > 0 and math.isfinite(epsilon)):
        return False
    return epsilon <= termination_threshold(v_hat, e_b)


def configure_delta(v_hat: float, epsilon: float, e_b: float, m: float, current_size: int) -> int:
    """Extra draws expected to shrink ``epsilon`` to the termination threshold."""
    if current_size < 1:
        raise ValueError("current_size must be >= 1")
    ratio = epsilon / termination_threshold(v_hat, e_b)
    return max(1, math.floor(current_size * (ratio ** (2.0 * m) - 1.0)))


# -- sampling frames -----------------------------------------------------------------


Judge = Callable[[NodeId], tuple[bool, float]]


@dataclass
class QueryPlan:
    """Everything a session needs to draw and validate answers for one query.

    ``distribution`` is the distribution draws come from; ``judge`` decides
    semantic correctness of one answer (filters are applied later).
    """

    distribution: AnswerDistribution
    judge: Judge
    diagnostics: dict[str, Any]
    paths_examined: Callable[[], int] = lambda: 0
    walkable: bool = False
    chain: ChainDistribution | None = None

    @property
    def candidate_count(self) -> int:
        return len(self.distribution)


def _simple_plan(g, p, anchor: NodeId, sq: QueryGraph, cfg: EngineConfig) -> QueryPlan:
    ad = answer_distribution(g, p, anchor, sq.predicate, sq.target_types, cfg)
    sd = ad.stationary
    validator = GreedyValidator(g, p, ad.model.region, sq.predicate, sd, cfg)

    def judge(answer: NodeId) -> tuple[bool, float]:
        s = validator.similarity(answer)
        return s >= cfg.tau, s

    diag = {
        "candidates": len(ad),
        "region_size": len(ad.model.region.members),
        "pi_steps": sd.steps,
        "pi_residual": sd.residual,
        "pi_converged": sd.converged,
    }
    return QueryPlan(ad, judge, diag, lambda: validator.paths_examined, walkable=True)


def _chain_plan(g, p, anchor: NodeId, sq: QueryGraph, cfg: EngineConfig) -> QueryPlan:
    chain = chain_distribution(g, p, anchor, sq, cfg)
    validators: dict[tuple[int, NodeId], GreedyValidator] = {}
    memo: dict[tuple[int, NodeId], tuple[bool, float]] = {}

    def stage_validator(depth: int, src: NodeId) -> GreedyValidator:
        key = (depth, src)
        if key not in validators:
            ad = chain.stages[depth][src][1]
            hop = sq.hops[depth]
            validators[key] = GreedyValidator(g, p, ad.model.region, hop.predicate, ad.stationary, cfg)
        return validators[key]

    def accept(depth: int, node: NodeId) -> tuple[bool, float]:
        # node is judged as an answer of hop ``depth``
        key = (depth, node)
        if key in memo:
            return memo[key]
        stage = chain.stages[depth]
        sources = sorted(
            (s for s in stage if stage[s][1].prob_of(node) > 0),
            key=lambda s: (-stage[s][0] * stage[s][1].prob_of(node), s),
        )
        best = (False, 0.0)
        for src in sources:
            up_ok, up_sim = (True, 1.0) if depth == 0 else accept(depth - 1, src)
            if not up_ok:
                continue
            s = stage_validator(depth, src).similarity(node)
            combined = min(up_sim, s)
            if s >= cfg.tau:
                best = (True, combined)
                break
            if combined > best[1]:
                best = (False, combined)
        memo[key] = best
        return best

    last = len(sq.hops) - 1
    stage1 = chain.stages[0][anchor][1]
    diag = {
        "candidates": len(chain.final),
        "stages": [len(stage) for stage in chain.stages],
        "pi_steps": stage1.stationary.steps,
        "pi_residual": stage1.stationary.residual,
        "pi_converged": all(ad.stationary.converged for st in chain.stages for _, ad in st.values()),
    }
    return QueryPlan(
        chain.final,
        lambda a: accept(last, a),
        diag,
        lambda: sum(v.paths_examined for v in validators.values()),
        chain=chain,
    )


def prepare_plan(
    g: KnowledgeGraph, p: SimilarityProvider, q: AggregateQuery, cfg: EngineConfig | None = None
) -> QueryPlan:
    """Resolve anchors and build distributions and validators for ``q``."""
    cfg = cfg or q.config
    parts = []
    for sq in q.subqueries:
        anchor = resolve_specific_node(g, sq.specific_name, sq.specific_types)
        parts.append(_simple_plan(g, p, anchor, sq, cfg) if sq.is_simple else _chain_plan(g, p, anchor, sq, cfg))
    if len(parts) == 1:
        return parts[0]
    ad = intersect_distributions([part.distribution for part in parts])

    def judge(answer: NodeId) -> tuple[bool, float]:
        ok, sim = True, 1.0
        for part in parts:
            part_ok, part_sim = part.judge(answer)
            ok, sim = ok and part_ok, min(sim, part_sim)
            if not ok:
                break
        return ok, sim

    diag = {"candidates": len(ad), "subqueries": [part.diagnostics for part in parts]}
    return QueryPlan(ad, judge, diag, lambda: sum(part.paths_examined() for part in parts))


# -- report --------------------------------------------------------------------------


def _finite(x: float | None) -> float | None:
    if x is None or not math.isfinite(x):
        return None
    return float(x)


@dataclass(frozen=True)
class GroupReport:
    estimate: float
    moe: float | None
    support: int
    low_support: bool

    def to_dict(self) -> dict[str, Any]:
        moe = None if self.low_support else _finite(self.moe)
        ci = None if moe is None else [self.estimate - moe, self.estimate + moe]
        return {
            "estimate": _finite(self.estimate),
            "moe": moe,
            "ci": ci,
            "support": self.support,
            "low_support": self.low_support,
        }


@dataclass(frozen=True)
class EstimateReport:
    func: str
    estimate: float | None
    moe: float | None
    confidence: float
    iterations: int
    sample_size: int
    validated_size: int
    delta_history: tuple[int, ...]
    terminated_by: str
    groups: Mapping[str, GroupReport] | None = None
    diagnostics: Mapping[str, Any] = field(default_factory=dict)

    @property
    def ci(self) -> tuple[float, float] | None:
        if self.estimate is None or self.moe is None or not math.isfinite(self.moe):
            return None
        return (self.estimate - self.moe, self.estimate + self.moe)

    def to_dict(self) -> dict[str, Any]:
        ci = self.ci
        out: dict[str, Any] = {
            "func": self.func,
            "estimate": _finite(self.estimate),
            "moe": _finite(self.moe),
            "ci": list(ci) if ci else None,
            "confidence": self.confidence,
            "iterations": self.iterations,
            "sample_size": self.sample_size,
            "validated_size": self.validated_size,
            "delta_history": list(self.delta_history),
            "terminated_by": self.terminated_by,
        }
        if self.groups is not None:
            out["groups"] = {k: gr.to_dict() for k, gr in sorted(self.groups.items())}
        out["diagnostics"] = _jsonable(self.diagnostics)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, allow_nan=False)


def _jsonable(obj):
    if isinstance(obj, Mapping):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _finite(float(obj))
    return obj


# -- session -------------------------------------------------------------------------


@dataclass(frozen=True)
class RoundState:
    """One round's numbers; ``groups`` maps key -> (estimate, moe, support)."""

    estimate: float
    moe: float
    sample_size: int
    validated_size: int
    groups: Mapping[str, tuple[float, float, int]] | None = None


class Session:
    """Retained state of one query: distributions, draws and validations.

    Draws are kept as ``t`` small samples; growth is assigned to them
    round-robin so their sizes stay balanced.
    """

    def __init__(
        self,
        g: KnowledgeGraph,
        p: SimilarityProvider,
        q: AggregateQuery,
        cfg: EngineConfig | None = None,
        rng: np.random.Generator | None = None,
        plan: QueryPlan | None = None,
    ) -> None:
        self.g = g
        self.query = q
        self.cfg = cfg or q.config
        self.rng = rng if rng is not None else np.random.default_rng(self.cfg.seed)
        self.plan = plan or prepare_plan(g, p, q, self.cfg)
        if self.cfg.sampler_backend == "walk" and not self.plan.walkable:
            raise ValueError("the walk backend supports single-hop queries only")
        self._paths_at_start = self.plan.paths_examined()
        self.small: list[ValidatedSample] = [ValidatedSample((), 0) for _ in range(self.cfg.t)]
        self._cursor = 0
        self._verdicts: dict[NodeId, tuple[bool, float]] = {}
        self.computations: dict[NodeId, int] = {}
        self._walker: RejectionWalker | None = None
        self.rounds: list[RoundState] = []
        self.delta_history: list[int] = []
        self.terminated_by: str | None = None
        self.sample_cap_reached = False
        self.closed = False
        self.report: EstimateReport | None = None

    # drawing and validation

    def _judge(self, answer: NodeId) -> tuple[bool, float]:
        if answer not in self._verdicts:
            self.computations[answer] = self.computations.get(answer, 0) + 1
            self._verdicts[answer] = self.plan.judge(answer)
        return self._verdicts[answer]

    def _draw(self, size: int) -> Sample:
        if self.cfg.sampler_backend == "walk":
            if self._walker is None:
                self._walker = RejectionWalker(self.plan.distribution, self.rng)
            return draw_sample(self.plan.distribution, size, self.rng, "walk", self._walker)
        return draw_sample(self.plan.distribution, size, self.rng)

    def _add(self, index: int, size: int) -> None:
        s = self._draw(size)
        vs = validate_sample(s, self.query.filters, self._judge, lambda a: self.g.node(a).attrs)
        self.small[index] = self.small[index] + vs

    def grow(self, delta: int) -> None:
        """Add ``delta`` draws, spread round-robin over the small samples."""
        t = len(self.small)
        counts = [0] * t
        for k in range(delta):
            counts[(self._cursor + k) % t] += 1
        self._cursor = (self._cursor + delta) % t
        for i, c in enumerate(counts):
            if c:
                self._add(i, c)

    @property
    def sample_size(self) -> int:
        return sum(s.sample_size for s in self.small)

    @property
    def pooled(self) -> ValidatedSample:
        return ValidatedSample.pool(self.small)

    # rounds

    def _evaluate(self) -> RoundState:
        q, cfg = self.query, self.cfg
        pooled = self.pooled
        groups = None
        if q.group_by is not None:
            pe = estimate_grouped(pooled, q.func, q.attr, q.group_by)
            groups = {}
            for key, g_est in pe.per_group.items():
                eps = math.inf
                if g_est.basis_size >= cfg.min_group_support:
                    eps = self._moe(group=(q.group_by, key))
                groups[key] = (g_est.value, eps, g_est.basis_size)
            value = pe.value
            eps = self._moe() if math.isfinite(value) else math.inf
        else:
            try:
                value = estimate(pooled, q.func, q.attr).value
            except EmptyValidatedSample:
                value = math.nan
            eps = self._moe() if math.isfinite(value) else math.inf
        return RoundState(value, eps, pooled.sample_size, pooled.basis_size, groups)

    def _moe(self, group=None) -> float:
        cfg = self.cfg
        try:
            eps, _ = blb_moe(self.small, self.query.func, self.query.attr, cfg.alpha, cfg.B, self.rng, group=group)
        except EmptyValidatedSample:
            return math.inf
        return eps

    def _met(self, st: RoundState) -> bool:
        e_b = self.cfg.e_b
        if st.groups is None:
            return termination_met(st.estimate, st.moe, e_b)
        supported = [(v, eps) for v, eps, n in st.groups.values() if n >= self.cfg.min_group_support]
        return bool(supported) and all(termination_met(v, eps, e_b) for v, eps in supported)

    def _delta(self, st: RoundState) -> int:
        """Growth for the next round; doubles when the estimate gives no guidance."""
        cfg = self.cfg
        size = st.sample_size
        pairs = [(st.estimate, st.moe)]
        if st.groups is not None:
            pairs = [(v, eps) for v, eps, n in st.groups.values()
                     if n >= cfg.min_group_support and not termination_met(v, eps, cfg.e_b)]
        deltas = []
        for v, eps in pairs:
            if not (math.isfinite(v) and v > 0 and math.isfinite(eps)):
                return size
            deltas.append(configure_delta(v, eps, cfg.e_b, cfg.m, size))
        return max(deltas) if deltas else size

    def run(self) -> EstimateReport:
        """Initial draws followed by the refinement loop."""
        if self.rounds:
            return self.report
        if self.query.func in EXTREME_FUNCS:
            return self._run_extreme()
        cfg = self.cfg
        per_small = math.ceil((cfg.lam * self.plan.candidate_count) ** cfg.m)
        for i in range(len(self.small)):
            self._add(i, per_small)
        return self._loop()

    def _loop(self) -> EstimateReport:
        cfg = self.cfg
        for k in range(cfg.max_iterations):
            st = self._evaluate()
            self.rounds.append(st)
            if self._met(st):
                self.terminated_by = "bound-met"
                break
            if k == cfg.max_iterations - 1:
                self.terminated_by = "iteration-cap"
                break
            if not self._grow_by(self._delta(st)):
                self.terminated_by = "iteration-cap"
                break
        return self._build_report()

    def _grow_by(self, delta: int) -> bool:
        """Grow within ``max_sample_size``; False once the cap is reached."""
        room = self.cfg.max_sample_size - self.sample_size
        if room <= 0:
            self.sample_cap_reached = True
            return False
        delta = min(delta, room)
        self.delta_history.append(delta)
        self.grow(delta)
        return True

    def _run_extreme(self) -> EstimateReport:
        cfg, q = self.cfg, self.query
        step = max(1, math.ceil(cfg.extreme_sample_ratio * self.plan.candidate_count))
        for k in range(cfg.extreme_rounds):
            if k:
                self.delta_history.append(step)
            self.grow(step)
            pooled = self.pooled
            try:
                value = estimate(pooled, q.func, q.attr).value
            except EmptyValidatedSample:
                value = math.nan
            self.rounds.append(RoundState(value, math.nan, pooled.sample_size, pooled.basis_size))
        self.terminated_by = "fixed-rounds"
        return self._build_report()

    def refine(self, new_e_b: float) -> EstimateReport:
        """Re-check the last round against ``new_e_b`` and resume if needed."""
        if self.closed or not self.rounds:
            raise SessionExpired("session has no completed run")
        self.cfg = self.cfg.replace(e_b=new_e_b)
        if self.query.func in EXTREME_FUNCS:
            return self.report
        last = self.rounds[-1]
        if self._met(last):
            self.terminated_by = "bound-met"
            self.report = self._build_report()
            return self.report
        if not self._grow_by(self._delta(last)):
            self.terminated_by = "iteration-cap"
            self.report = self._build_report()
            return self.report
        return self._loop()

    def close(self) -> None:
        self.closed = True

    def _build_report(self) -> EstimateReport:
        cfg, q = self.cfg, self.query
        last = self.rounds[-1]
        extreme = q.func in EXTREME_FUNCS
        groups = None
        if last.groups is not None:
            groups = {
                key: GroupReport(v, None if extreme else eps, n, n < cfg.min_group_support)
                for key, (v, eps, n) in last.groups.items()
            }
        pooled = self.pooled
        missing = 0
        if q.func != "count" and pooled.accepted:
            missing = sum(1 for e in pooled.accepted if q.attr not in e.attrs)
        diag = dict(self.plan.diagnostics)
        diag.update({
            "sampler": cfg.sampler_backend,
            "rejected_count": pooled.rejected_count,
            "missing_attr": missing,
            "distinct_answers_validated": len(self._verdicts),
            "validation_paths_examined": self.plan.paths_examined() - self._paths_at_start,
            "validation_recomputations": sum(c - 1 for c in self.computations.values()),
            "small_sample_sizes": [s.sample_size for s in self.small],
            "sample_cap_reached": self.sample_cap_reached,
            "rounds": [
                {"estimate": r.estimate, "moe": None if extreme else r.moe,
                 "sample_size": r.sample_size, "validated_size": r.validated_size}
                for r in self.rounds
            ],
        })
        if self._walker is not None:
            diag["walk_steps"] = self._walker.steps
            diag["walk_rejections"] = self._walker.rejections
        self.report = EstimateReport(
            func=q.func,
            estimate=_finite(last.estimate),
            moe=None if extreme else _finite(last.moe),
            confidence=1.0 - cfg.alpha,
            iterations=len(self.rounds),
            sample_size=last.sample_size,
            validated_size=last.validated_size,
            delta_history=tuple(self.delta_history),
            terminated_by=self.terminated_by,
            groups=groups,
            diagnostics=diag,
        )
        return self.report


def run_query(
    g: KnowledgeGraph,
    p: SimilarityProvider,
    q: AggregateQuery,
    cfg: EngineConfig | None = None,
    rng: np.random.Generator | None = None,
    plan: QueryPlan | None = None,
) -> EstimateReport:
    return Session(g, p, q, cfg, rng, plan).run()


def start_session(
    g: KnowledgeGraph,
    p: SimilarityProvider,
    q: AggregateQuery,
    cfg: EngineConfig | None = None,
    rng: np.random.Generator | None = None,
) -> Session:
    """Run ``q`` and keep its state for later refinement."""
    s = Session(g, p, q, cfg, rng)
    s.run()
    return s


def refine_error_bound(session: Session, new_e_b: float) -> EstimateReport:
    return session.refine(new_e_b)
