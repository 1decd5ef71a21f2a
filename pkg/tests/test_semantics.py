import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from kgapprox.errors import EmptyInput, EmptyPath, MixedAnswers, UnknownPredicate
from kgapprox.semantics import (
    EmbeddingTable,
    ExplicitTable,
    MatchPath,
    answer_similarity,
    load_embeddings,
    path_similarity,
    predicate_similarity,
)

TABLE = ExplicitTable({("assembly", "product"): 0.98, ("country", "product"): 0.81})


def test_explicit_lookup_and_symmetry():
    assert predicate_similarity(TABLE, "assembly", "product") == 0.98
    assert predicate_similarity(TABLE, "product", "assembly") == 0.98
    assert predicate_similarity(TABLE, "country", "country") == 1.0


def test_unlisted_pair_gets_floor():
    assert predicate_similarity(TABLE, "assembly", "country") == pytest.approx(1e-4)


def test_unknown_predicate_named():
    with pytest.raises(UnknownPredicate) as info:
        predicate_similarity(TABLE, "assembly", "nope")
    assert info.value.predicate == "nope"


def test_self_similarity_must_be_one():
    with pytest.raises(ValueError):
        ExplicitTable({("a", "a"): 0.5})


def test_orthogonal_embeddings_clamped():
    emb = EmbeddingTable({"a": [1.0, 0.0], "b": [0.0, 1.0], "c": [-1.0, 0.0]})
    assert predicate_similarity(emb, "a", "b") == pytest.approx(1e-4)
    assert predicate_similarity(emb, "a", "c") == pytest.approx(1e-4)
    assert predicate_similarity(emb, "a", "a") == pytest.approx(1.0)


def test_embedding_dimension_mismatch():
    with pytest.raises(ValueError):
        EmbeddingTable({"a": [1.0, 0.0], "b": [1.0, 0.0, 0.0]})


def test_load_embeddings(tmp_path):
    f = tmp_path / "emb.tsv"
    f.write_text("a\t1\t0\nb\t1\t1\n")
    emb = load_embeddings(f)
    assert predicate_similarity(emb, "a", "b") == pytest.approx(1 / math.sqrt(2))


def test_path_similarity_worked_example():
    assert path_similarity(TABLE, ["assembly", "country"], "product") == pytest.approx(0.8909545, abs=1e-6)
    assert round(path_similarity(TABLE, ["assembly", "country"], "product"), 2) == 0.89


def test_single_edge_and_constant_paths():
    t = ExplicitTable({("h", "q"): 0.5})
    assert path_similarity(TABLE, ["assembly"], "product") == 0.98
    assert path_similarity(t, ["h", "h", "h"], "q") == pytest.approx(0.5)


def test_empty_path():
    with pytest.raises(EmptyPath):
        path_similarity(TABLE, [], "product")


def test_answer_similarity_max_and_ties():
    a = MatchPath("x", (1, 2), 0.82)
    b = MatchPath("x", (3, 4), 0.89)
    assert answer_similarity([a, b]).similarity == 0.89
    short, long_ = MatchPath("x", (5, 6), 0.7), MatchPath("x", (1, 2, 3), 0.7)
    assert answer_similarity([long_, short]).best_path == short
    assert answer_similarity([MatchPath("x", (9,), 1.0)]).similarity == 1.0


def test_answer_similarity_errors():
    with pytest.raises(EmptyInput):
        answer_similarity([])
    with pytest.raises(MixedAnswers):
        answer_similarity([MatchPath("x", (1,), 0.5), MatchPath("y", (2,), 0.5)])


sims = st.lists(st.floats(0.001, 1.0), min_size=1, max_size=6)


def _table(values):
    return ExplicitTable({(f"p{i}", "q"): v for i, v in enumerate(values)}), [f"p{i}" for i in range(len(values))]


@given(sims, st.randoms())
def test_permutation_invariance(values, rnd):
    t, preds = _table(values)
    shuffled = preds[:]
    rnd.shuffle(shuffled)
    assert path_similarity(t, preds, "q") == pytest.approx(path_similarity(t, shuffled, "q"), rel=1e-12)


@given(sims, st.integers(0, 5), st.floats(0.0, 1.0))
def test_raising_an_edge_never_lowers(values, k, bump):
    k %= len(values)
    t, preds = _table(values)
    raised = list(values)
    raised[k] = min(1.0, raised[k] + bump * (1 - raised[k]))
    t2, _ = _table(raised)
    assert path_similarity(t2, preds, "q") >= path_similarity(t, preds, "q") - 1e-12


def test_longer_path_can_win():
    t = ExplicitTable({("a", "q"): 0.9, ("b", "q"): 0.5})
    assert path_similarity(t, ["a", "a", "a"], "q") > path_similarity(t, ["b"], "q")


@given(st.lists(st.floats(-1, 1), min_size=3, max_size=3), st.lists(st.floats(-1, 1), min_size=3, max_size=3),
       st.floats(0.01, 100))
def test_cosine_scale_invariant(u, v, c):
    if np.linalg.norm(u) < 1e-3 or np.linalg.norm(v) < 1e-3:
        return
    e1 = EmbeddingTable({"a": u, "b": v})
    e2 = EmbeddingTable({"a": [c * x for x in u], "b": v})
    assert predicate_similarity(e1, "a", "b") == pytest.approx(predicate_similarity(e2, "a", "b"), abs=1e-9)
