"""Ranking and the mAP@10 / R@k retrieval metrics."""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from coattn.errors import ContractError
from coattn.objective import cosine_similarity

RECALL_KS = (1, 5, 10)
MAP_CUTOFF = 10


@dataclass(frozen=True)
class RelevanceSet:
    query_id: str
    relevant_ids: frozenset

    def __post_init__(self):
        if not self.relevant_ids:
            raise ContractError(f"query {self.query_id!r} has an empty relevance set")


@dataclass(frozen=True)
class RankingResult:
    query_id: str
    items: tuple  # ((item_id, score), ...), best first

    @property
    def ids(self) -> list:
        return [i for i, _ in self.items]


def rank_scores(query_id: str, scored: Iterable[tuple[str, float]]) -> RankingResult:
    """Sort by descending score; ties go to the smaller item id."""
    items = sorted(((i, float(s)) for i, s in scored), key=lambda p: (-p[1], p[0]))
    ids = [i for i, _ in items]
    if len(set(ids)) != len(ids):
        raise ContractError(f"duplicate candidate ids while ranking query {query_id!r}")
    return RankingResult(query_id, tuple(items))


def rank(query, candidates: Sequence[tuple[str, np.ndarray]], query_id: str = "query") -> RankingResult:
    if not candidates:
        raise ContractError("cannot rank an empty candidate list")
    return rank_scores(query_id, ((cid, cosine_similarity(query, vec)) for cid, vec in candidates))


def _relevant(rel) -> frozenset:
    ids = rel.relevant_ids if isinstance(rel, RelevanceSet) else frozenset(rel)
    if not ids:
        raise ContractError("relevance set is empty")
    return ids


def average_precision_at(result: RankingResult, rel, cutoff: int = MAP_CUTOFF) -> float:
    """Sum of precision@r over relevant hits in the top ``cutoff``, over min(|rel|, cutoff)."""
    if cutoff < 1:
        raise ContractError(f"cutoff must be >= 1, got {cutoff}")
    relevant = _relevant(rel)
    hits = 0
    total = 0.0
    for r, item in enumerate(result.ids[:cutoff], start=1):
        if item in relevant:
            hits += 1
            total += hits / r
    return total / min(len(relevant), cutoff)


def recall_at(result: RankingResult, rel, k: int, binary: bool = False) -> float:
    """Fraction of relevant items in the top k (or 1/0 for any hit when ``binary``)."""
    if k < 1:
        raise ContractError(f"k must be >= 1, got {k}")
    relevant = _relevant(rel)
    found = sum(1 for item in result.ids[:k] if item in relevant)
    if binary:
        return 1.0 if found else 0.0
    return found / len(relevant)


@dataclass(frozen=True)
class MetricsReport:
    map_at_10: float
    r_at_1: float
    r_at_5: float
    r_at_10: float
    num_queries: int

    def to_text(self) -> str:
        return "\n".join(f"{k}={v!r}" if isinstance(v, float) else f"{k}={v}"
                         for k, v in asdict(self).items()) + "\n"

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "MetricsReport":
        kv = dict(line.split("=", 1) for line in text.split() if "=" in line)
        return cls(float(kv["map_at_10"]), float(kv["r_at_1"]), float(kv["r_at_5"]),
                   float(kv["r_at_10"]), int(kv["num_queries"]))


def _query_metrics(result: RankingResult, rel, binary: bool) -> tuple[float, ...]:
    return (average_precision_at(result, rel, MAP_CUTOFF),
            *(recall_at(result, rel, k, binary) for k in RECALL_KS))


def evaluate(rankings: Sequence[RankingResult], relevance: Mapping[str, Iterable],
             binary_recall: bool = False, workers: int = 1) -> MetricsReport:
    """Average mAP@10 and R@{1,5,10} over queries.

    Per-query values are summed in query order, so the report does not depend
    on ``workers``.
    """
    rankings = list(rankings)
    if not rankings:
        raise ContractError("no queries to evaluate")
    for r in rankings:
        if r.query_id not in relevance:
            raise ContractError(f"query {r.query_id!r} has no relevance set")

    def one(r):
        return _query_metrics(r, relevance[r.query_id], binary_recall)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            per_query = list(pool.map(one, rankings))
    else:
        per_query = [one(r) for r in rankings]
    n = len(per_query)
    sums = [0.0] * 4
    for row in per_query:
        for i, v in enumerate(row):
            sums[i] += v
    return MetricsReport(sums[0] / n, sums[1] / n, sums[2] / n, sums[3] / n, n)


def evaluate_vectors(queries: Sequence[tuple[str, np.ndarray]], candidates: Sequence[tuple[str, np.ndarray]],
                     relevance: Mapping[str, Iterable], binary_recall: bool = False) -> MetricsReport:
    """Evaluate fixed query/candidate vectors ranked by cosine similarity."""
    for qid, _ in queries:
        if qid not in relevance:
            raise ContractError(f"query {qid!r} has no relevance set")
    return evaluate([rank(vec, candidates, qid) for qid, vec in queries], relevance, binary_recall)


def evaluate_scores(query_ids: Sequence[str], candidate_ids: Sequence[str], scores: np.ndarray,
                    relevance: Mapping[str, Iterable], binary_recall: bool = False,
                    workers: int = 1) -> MetricsReport:
    """Evaluate a precomputed score matrix with ``scores[q, c]`` for query q, candidate c."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape != (len(query_ids), len(candidate_ids)):
        raise ContractError(f"score matrix {scores.shape} does not match "
                            f"{len(query_ids)} queries x {len(candidate_ids)} candidates")
    for qid in query_ids:
        if qid not in relevance:
            raise ContractError(f"query {qid!r} has no relevance set")
    rankings = [rank_scores(qid, zip(candidate_ids, scores[i])) for i, qid in enumerate(query_ids)]
    return evaluate(rankings, relevance, binary_recall, workers)
