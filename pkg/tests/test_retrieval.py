import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from coattn.errors import ContractError
from coattn.retrieval import (
    MetricsReport,
    RankingResult,
    RelevanceSet,
    average_precision_at,
    evaluate,
    evaluate_scores,
    evaluate_vectors,
    rank,
    rank_scores,
    recall_at,
)


def ranking(ids):
    return RankingResult("q", tuple((i, float(-n)) for n, i in enumerate(ids)))


def test_rank_by_score_then_id():
    r = rank_scores("q", [("b", 0.5), ("a", 0.5), ("c", 0.9)])
    assert r.ids == ["c", "a", "b"]


def test_rank_cosine():
    r = rank([1.0, 0.0], [("x", np.array([0.0, 1.0])), ("y", np.array([2.0, 0.1])), ("z", np.array([-1.0, 0]))])
    assert r.ids == ["y", "x", "z"]


def test_rank_rejects_duplicates_and_empty():
    with pytest.raises(ContractError):
        rank_scores("q", [("a", 1.0), ("a", 0.5)])
    with pytest.raises(ContractError):
        rank([1.0], [])


def test_ap_examples():
    assert average_precision_at(ranking(["a", "b", "c"]), {"a"}) == 1.0
    assert average_precision_at(ranking(["b", "a", "c"]), {"a"}) == 0.5
    assert math.isclose(average_precision_at(ranking(["a", "b", "c"]), {"a", "c"}), (1 + 2 / 3) / 2)
    assert average_precision_at(ranking(["b", "c"]), {"a"}) == 0.0


def test_ap_cutoff_normalisation():
    ids = [f"x{i:02d}" for i in range(15)]
    rel = set(ids[:12])
    assert average_precision_at(ranking(ids), rel, 10) == 1.0
    assert average_precision_at(ranking(ids[1:] + ids[:1]), {ids[0]}, 10) == 0.0


def test_ap_exhaustive_against_oracle():
    cands = "abcdefgh"
    checked = 0
    for n in range(1, 9):
        for rel_size in range(1, min(3, n) + 1):
            rel = set(cands[:rel_size])
            for perm in itertools.permutations(cands[:n]):
                got = average_precision_at(ranking(perm), rel, 10)
                assert math.isclose(got, oracles.average_precision(perm, rel, 10), rel_tol=1e-12, abs_tol=1e-15)
                checked += 1
    assert checked > 1000


def test_recall_examples():
    r = ranking(["a", "x", "b", "y", "c", "z"])
    rel = {"a", "b", "c", "d", "e"}
    assert recall_at(r, rel, 5) == 0.6
    assert recall_at(r, rel, 1) == 0.2
    assert recall_at(r, {"b"}, 1) == 0.0
    assert recall_at(r, {"b"}, 5) == 1.0
    assert recall_at(r, rel, 1, binary=True) == 1.0


def test_empty_relevance_rejected():
    with pytest.raises(ContractError):
        RelevanceSet("q", frozenset())
    with pytest.raises(ContractError):
        recall_at(ranking(["a"]), set(), 1)


# Coarse grid so the nonlinear transform below stays strictly monotone in floats.
scored = st.lists(st.integers(-50, 50).map(lambda n: n / 10), min_size=2, max_size=12)


@settings(max_examples=300)
@given(scored, st.data())
def test_metric_properties(scores, data):
    ids = [f"c{i:02d}" for i in range(len(scores))]
    rel = set(data.draw(st.lists(st.sampled_from(ids), min_size=1, max_size=4, unique=True)))
    r = rank_scores("q", zip(ids, scores))
    ap = average_precision_at(r, rel)
    assert 0.0 <= ap <= 1.0
    recalls = [recall_at(r, rel, k) for k in range(1, 13)]
    assert all(0.0 <= x <= 1.0 for x in recalls)
    assert recalls == sorted(recalls)
    perm = data.draw(st.permutations(range(len(ids))))
    shuffled = rank_scores("q", [(ids[i], scores[i]) for i in perm])
    assert shuffled == r
    transformed = rank_scores("q", [(i, math.exp(3 * s) + 1) for i, s in zip(ids, scores)])
    assert average_precision_at(transformed, rel) == ap


def test_evaluate_perfect_and_keys():
    ids = ["a", "b", "c"]
    scores = np.eye(3)
    rep = evaluate_scores(ids, ids, scores, {i: {i} for i in ids})
    assert (rep.map_at_10, rep.r_at_1, rep.r_at_5, rep.r_at_10, rep.num_queries) == (1.0, 1.0, 1.0, 1.0, 3)
    text = rep.to_text()
    for key in ("map_at_10=", "r_at_1=", "r_at_5=", "r_at_10=", "num_queries="):
        assert key in text
    assert MetricsReport.from_text(text) == rep


def test_evaluate_matches_per_query_oracle(rng):
    q, c = 6, 15
    scores = rng.standard_normal((q, c))
    qids = [f"q{i}" for i in range(q)]
    cids = [f"c{j:02d}" for j in range(c)]
    rel = {qid: set(rng.choice(cids, size=1 + i % 3, replace=False)) for i, qid in enumerate(qids)}
    rep = evaluate_scores(qids, cids, scores, rel)
    aps = []
    for i, qid in enumerate(qids):
        order = [cids[j] for j in sorted(range(c), key=lambda j: (-scores[i, j], cids[j]))]
        aps.append(oracles.average_precision(order, rel[qid], 10))
    assert math.isclose(rep.map_at_10, sum(aps) / q, rel_tol=1e-12)


def test_evaluate_workers_independent(rng):
    scores = rng.standard_normal((20, 30))
    qids = [f"q{i}" for i in range(20)]
    cids = [f"c{j}" for j in range(30)]
    rel = {qid: {cids[i]} for i, qid in enumerate(qids)}
    assert evaluate_scores(qids, cids, scores, rel, workers=1) == evaluate_scores(qids, cids, scores, rel, workers=4)


def test_missing_relevance_names_query():
    with pytest.raises(ContractError, match="q9"):
        evaluate([RankingResult("q9", (("a", 1.0),))], {})
    with pytest.raises(ContractError):
        evaluate([], {})


def test_score_matrix_shape_checked():
    with pytest.raises(ContractError):
        evaluate_scores(["q"], ["a", "b"], np.zeros((1, 3)), {"q": {"a"}})


def test_evaluate_vectors():
    cands = [("a", np.array([1.0, 0.0])), ("b", np.array([0.0, 1.0]))]
    rep = evaluate_vectors([("qa", np.array([1.0, 0.1])), ("qb", np.array([0.1, 1.0]))], cands,
                           {"qa": {"a"}, "qb": {"b"}})
    assert rep.map_at_10 == 1.0 and rep.r_at_1 == 1.0
