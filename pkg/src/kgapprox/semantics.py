"""Predicate similarity providers and path / answer scoring."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import EmptyInput, EmptyPath, MalformedLine, MixedAnswers, UnknownPredicate

DEFAULT_EPS_SIM = 1e-4


class SimilarityProvider:
    """Source of raw predicate similarities; clamping happens in
    :func:`predicate_similarity`."""

    eps_sim: float = DEFAULT_EPS_SIM

    def knows(self, predicate: str) -> bool:
        raise NotImplementedError

    def raw(self, a: str, b: str) -> float:
        raise NotImplementedError

    def _check(self, *predicates: str) -> None:
        for p in predicates:
            if not self.knows(p):
                raise UnknownPredicate(p)


class EmbeddingTable(SimilarityProvider):
    """Cosine similarity between fixed predicate vectors."""

    def __init__(self, vectors: Mapping[str, Sequence[float]], eps_sim: float = DEFAULT_EPS_SIM):
        dims = set()
        self._unit: dict[str, np.ndarray] = {}
        for pred, vec in vectors.items():
            arr = np.asarray(vec, dtype=float)
            if arr.ndim != 1 or arr.size == 0:
                raise ValueError(f"embedding for {pred!r} must be a non-empty vector")
            norm = float(np.linalg.norm(arr))
            if norm == 0.0 or not math.isfinite(norm):
                raise ValueError(f"embedding for {pred!r} is zero or non-finite")
            dims.add(arr.size)
            self._unit[pred] = arr / norm
        if len(dims) > 1:
            raise ValueError(f"embeddings have mixed dimensions {sorted(dims)}")
        self.dim = dims.pop() if dims else 0
        self.eps_sim = eps_sim

    def knows(self, predicate: str) -> bool:
        return predicate in self._unit

    def raw(self, a: str, b: str) -> float:
        self._check(a, b)
        return float(self._unit[a] @ self._unit[b])


class ExplicitTable(SimilarityProvider):
    """Symmetric lookup table; unlisted pairs of known predicates get ``eps_sim``."""

    def __init__(
        self,
        pairs: Mapping[tuple[str, str], float],
        predicates: Iterable[str] = (),
        eps_sim: float = DEFAULT_EPS_SIM,
    ):
        table: dict[tuple[str, str], float] = {}
        known = set(predicates)
        for (a, b), value in pairs.items():
            value = float(value)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"similarity for ({a!r}, {b!r}) outside [0, 1]: {value}")
            if a == b and value != 1.0:
                raise ValueError(f"self-similarity of {a!r} must be 1.0, got {value}")
            for key in ((a, b), (b, a)):
                if key in table and table[key] != value:
                    raise ValueError(f"asymmetric similarity for ({a!r}, {b!r})")
                table[key] = value
            known.update((a, b))
        self._table = table
        self._known = frozenset(known)
        self.eps_sim = eps_sim

    @property
    def predicates(self) -> frozenset[str]:
        return self._known

    def knows(self, predicate: str) -> bool:
        return predicate in self._known

    def raw(self, a: str, b: str) -> float:
        self._check(a, b)
        if a == b:
            return 1.0
        return self._table.get((a, b), self.eps_sim)


def load_embeddings(path: str | os.PathLike, eps_sim: float = DEFAULT_EPS_SIM) -> EmbeddingTable:
    vectors: dict[str, list[float]] = {}
    with open(path, encoding="utf-8") as fh:
        for row, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            cols = line.split("\t")
            if len(cols) < 2:
                raise MalformedLine(str(path), row, "expected: predicate, v1 .. vd")
            try:
                vectors[cols[0]] = [float(x) for x in cols[1:]]
            except ValueError:
                raise MalformedLine(str(path), row, "non-numeric vector component") from None
    return EmbeddingTable(vectors, eps_sim=eps_sim)


def load_simtable(path: str | os.PathLike, eps_sim: float = DEFAULT_EPS_SIM) -> ExplicitTable:
    pairs: dict[tuple[str, str], float] = {}
    with open(path, encoding="utf-8") as fh:
        for row, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            cols = line.split("\t")
            if len(cols) != 3:
                raise MalformedLine(str(path), row, "expected: predicate_a, predicate_b, similarity")
            try:
                pairs[(cols[0], cols[1])] = float(cols[2])
            except ValueError:
                raise MalformedLine(str(path), row, "similarity is not a number") from None
    return ExplicitTable(pairs, eps_sim=eps_sim)


def write_simtable(table: Mapping[tuple[str, str], float], path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for (a, b), value in sorted(table.items()):
            fh.write(f"{a}\t{b}\t{value!r}\n")


# -- scoring -------------------------------------------------------------------------


def predicate_similarity(p: SimilarityProvider, a: str, b: str) -> float:
    """Similarity of two predicates, clamped to ``[eps_sim, 1]``."""
    return min(1.0, max(p.eps_sim, p.raw(a, b)))


def path_similarity(
    p: SimilarityProvider, path_predicates: Sequence[str], query_predicate: str
) -> float:
    """Geometric mean of the per-edge similarities to ``query_predicate``."""
    if not path_predicates:
        raise EmptyPath("path has no edges")
    logs = [math.log(predicate_similarity(p, pred, query_predicate)) for pred in path_predicates]
    return geometric_mean_from_logs(logs)


def geometric_mean_from_logs(logs: Sequence[float]) -> float:
    return min(1.0, math.exp(math.fsum(logs) / len(logs)))


@dataclass(frozen=True)
class MatchPath:
    answer: str
    edge_ids: tuple[int, ...]
    score: float

    @property
    def length(self) -> int:
        return len(self.edge_ids)

    def sort_key(self) -> tuple:
        # best first: higher score, then shorter, then lexicographic edge ids
        return (-self.score, self.length, self.edge_ids)


@dataclass(frozen=True)
class ScoredAnswer:
    answer: str
    similarity: float
    best_path: MatchPath | None


def answer_similarity(paths: Sequence[MatchPath]) -> ScoredAnswer:
    """Best-scoring path for one answer."""
    if not paths:
        raise EmptyInput("no paths given")
    answers = {mp.answer for mp in paths}
    if len(answers) > 1:
        raise MixedAnswers(f"paths end at different answers: {sorted(answers)}")
    best = min(paths, key=MatchPath.sort_key)
    return ScoredAnswer(best.answer, best.score, best)
