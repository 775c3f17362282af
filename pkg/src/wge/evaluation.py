"""Filtered link-prediction ranking."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .data import TripleStore

HITS_AT = (1, 3, 10)


def rank_query(scores: np.ndarray, gold: int, candidates: np.ndarray) -> float:
    """Expected rank of ``gold`` among ``candidates`` with ties in random order.

    ``scores`` holds a score for every entity id; only ``candidates`` compete.
    """
    candidates = np.asarray(candidates)
    if candidates.size == 0:
        raise ValueError("cannot rank against an empty candidate set")
    if not np.any(candidates == gold):
        raise ValueError(f"gold entity {gold} is not among the candidates")
    target = scores[gold]
    cand = scores[candidates]
    higher = np.count_nonzero(cand > target)
    ties = np.count_nonzero(cand == target) - 1
    return 1.0 + higher + ties / 2.0


@dataclass
class QueryRank:
    triple: tuple[int, int, int]
    direction: str  # "head" or "tail"
    rank: float


@dataclass
class RankingReport:
    split: str
    queries: list[QueryRank] = field(default_factory=list)

    @property
    def ranks(self) -> np.ndarray:
        return np.array([q.rank for q in self.queries], dtype=np.float64)

    @property
    def mrr(self) -> float:
        return mean_reciprocal_rank(self.ranks)

    def hits(self, k: int) -> float:
        return hits_at(self.ranks, k)

    def metrics(self) -> dict[str, float]:
        out = {"mrr": self.mrr}
        for k in HITS_AT:
            out[f"hits@{k}"] = self.hits(k)
        return out

    def record(self, **extra) -> str:
        """One JSON line with the named metric fields."""
        return json.dumps({**extra, "split": self.split, "n_queries": len(self.queries), **self.metrics()},
                          sort_keys=True)

    def table(self) -> str:
        m = self.metrics()
        lines = [f"split: {self.split}   queries: {len(self.queries)}",
                 f"{'metric':<10}{'value':>10}",
                 f"{'-' * 20}"]
        for name, val in m.items():
            lines.append(f"{name:<10}{val:>10.4f}")
        return "\n".join(lines)


def mean_reciprocal_rank(ranks: Iterable[float]) -> float:
    ranks = np.asarray(list(ranks) if not isinstance(ranks, np.ndarray) else ranks, dtype=np.float64)
    if ranks.size == 0:
        return float("nan")
    return float(np.mean(1.0 / ranks))


def hits_at(ranks: Iterable[float], k: int) -> float:
    ranks = np.asarray(list(ranks) if not isinstance(ranks, np.ndarray) else ranks, dtype=np.float64)
    if ranks.size == 0:
        return float("nan")
    return float(np.mean(ranks <= k))


ScoreFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


def evaluate(triples: np.ndarray, store: TripleStore, tail_scores: ScoreFn, head_scores: ScoreFn,
             split: str = "test", batch_size: int = 256, filtered: bool = True) -> RankingReport:
    """Rank every triple twice, once replacing the tail and once the head.

    ``tail_scores(heads, rels)`` and ``head_scores(rels, tails)`` return
    (B, |E|) score matrices. Queries are processed in input order, tail query
    first, so the report is deterministic.
    """
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    n_e = store.vocab.n_entities
    all_entities = np.arange(n_e)
    report = RankingReport(split)
    for start in range(0, len(triples), batch_size):
        chunk = triples[start:start + batch_size]
        ts = tail_scores(chunk[:, 0], chunk[:, 1])
        hs = head_scores(chunk[:, 1], chunk[:, 2])
        for row, (h, r, t) in enumerate(chunk.tolist()):
            cands = store.filtered_candidates(h, r, None, gold=t) if filtered else all_entities
            report.queries.append(QueryRank((h, r, t), "tail", rank_query(ts[row], t, cands)))
            cands = store.filtered_candidates(None, r, t, gold=h) if filtered else all_entities
            report.queries.append(QueryRank((h, r, t), "head", rank_query(hs[row], h, cands)))
    return report


def evaluate_model(model, store: TripleStore, split: str = "test", **kw) -> RankingReport:
    reps = model.representations()
    return evaluate(store.split(split), store, reps.tail_scores, reps.head_scores, split=split, **kw)
