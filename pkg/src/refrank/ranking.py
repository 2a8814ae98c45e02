"""Cosine scoring, deterministic top-k ranking, and retrieval metrics.

All scoring is exhaustive (no approximate index).  Scores are computed from
32-bit inputs with 64-bit accumulation so results do not depend on vector
width.  Ranking is parallel over queries only; within one query the ordering
is a single deterministic sort.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from .store import EmbeddingStore
from .validation import check_matrix, check_nonzero_norm, check_vector


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine of the angle between two finite, nonzero vectors."""
    a = check_vector(a, name="a")
    b = check_vector(b, dim=a.shape[0], name="b")
    check_nonzero_norm(a, "a")
    check_nonzero_norm(b, "b")
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


def score_multivector(rows: np.ndarray, query: np.ndarray) -> float:
    """Best cosine over an item's embedding rows; k=1 degenerates to cosine."""
    rows = check_matrix(rows, name="rows")
    query = check_vector(query, dim=rows.shape[1], name="query")
    check_nonzero_norm(rows, "rows")
    check_nonzero_norm(query, "query")
    sims = rows @ query / (np.linalg.norm(rows, axis=1) * np.linalg.norm(query))
    return float(np.max(sims))


@dataclass(frozen=True)
class CandidateSet:
    """Ordered retrieval result for one query.

    ``entries`` is a list of (item_id, score), scores non-increasing, ties
    broken by ascending item_id.  ``clamped`` flags a requested k larger
    than the store.
    """

    query_id: str
    entries: tuple[tuple[str, float], ...]
    k: int
    clamped: bool = False

    @property
    def item_ids(self) -> list[str]:
        return [item_id for item_id, _ in self.entries]

    @property
    def scores(self) -> list[float]:
        return [score for _, score in self.entries]

    def rank_of(self, item_id: str) -> int | None:
        """1-based rank of ``item_id`` within the set, or None if absent."""
        for pos, (candidate, _) in enumerate(self.entries, start=1):
            if candidate == item_id:
                return pos
        return None


def _score_all(store: EmbeddingStore, queries: np.ndarray) -> np.ndarray:
    """Scores for each query against every item; (n_queries, n_items).

    Uses the multivector tensor when present, the global image matrix
    otherwise; never both.
    """
    q = np.asarray(queries, dtype=np.float64)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    if store.uses_multivector:
        mv = np.asarray(store.image_multivector, dtype=np.float64)
        norms = np.linalg.norm(mv, axis=-1, keepdims=True)
        mv = mv / np.maximum(norms, 1e-30)
        per_row = np.einsum("ikd,qd->qik", mv, q)
        return per_row.max(axis=2)
    mat = np.asarray(store.image_embeddings, dtype=np.float64)
    mat = mat / np.linalg.norm(mat, axis=-1, keepdims=True)
    return q @ mat.T


def rank_batch(queries: np.ndarray, store: EmbeddingStore, k: int,
               query_ids: list[str] | None = None) -> list[CandidateSet]:
    """Top-k candidates for each query row; deterministic per query."""
    queries = check_matrix(queries, cols=store.dim, name="queries")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if store.n_items == 0:
        raise ValueError("store is empty")
    clamped = k > store.n_items
    k_eff = min(k, store.n_items)

    scores = _score_all(store, queries)
    item_ids = np.array([item.item_id for item in store.items])
    id_rank = np.argsort(np.argsort(item_ids, kind="stable"), kind="stable")
    if query_ids is None:
        query_ids = [str(i) for i in range(len(queries))]

    results = []
    for qi in range(len(queries)):
        row = scores[qi]
        order = np.lexsort((id_rank, -row))[:k_eff]
        entries = tuple((str(item_ids[j]), float(row[j])) for j in order)
        results.append(CandidateSet(query_ids[qi], entries, k_eff, clamped))
    return results


def rank(query: np.ndarray, store: EmbeddingStore, k: int,
         query_id: str = "query") -> CandidateSet:
    """Top-k items for one query vector; see rank_batch for ordering rules."""
    query = check_vector(query, dim=store.dim, name="query")
    check_nonzero_norm(query, "query")
    return rank_batch(query[None, :], store, k, [query_id])[0]


def _check_ranks(ranks: list[int | None]) -> None:
    if not ranks:
        raise ValueError("empty query set")
    for r in ranks:
        if r is not None and r < 1:
            raise ValueError(f"ranks are 1-based, got {r}")


def mrr_at_k(ranks: list[int | None], k: int) -> float:
    """Mean reciprocal rank truncated at k; None means not retrieved."""
    _check_ranks(ranks)
    total = sum(1.0 / r for r in ranks if r is not None and r <= k)
    return total / len(ranks)


def hits_at_k(ranks: list[int | None], k: int) -> float:
    """Fraction of queries whose true item appears in the top k."""
    _check_ranks(ranks)
    return sum(1 for r in ranks if r is not None and r <= k) / len(ranks)


@dataclass
class MetricsReport:
    """Retrieval quality for one query set.

    Headline numbers describe one turn; ``turns`` optionally carries the
    per-turn breakdown of a multi-turn run (headline = final turn).
    """

    hits_at_1: float
    hits_at_5: float
    mrr_at_5: float
    n_queries: int
    turn: int = 1
    turns: tuple["MetricsReport", ...] = field(default=())

    def __post_init__(self) -> None:
        if not (self.hits_at_1 <= self.mrr_at_5 + 1e-12
                and self.mrr_at_5 <= self.hits_at_5 + 1e-12):
            raise ValueError(
                f"metric ordering violated: hits@1={self.hits_at_1} "
                f"mrr@5={self.mrr_at_5} hits@5={self.hits_at_5}"
            )

    def to_dict(self) -> dict:
        data = {
            "hits@1": self.hits_at_1,
            "hits@5": self.hits_at_5,
            "mrr@5": self.mrr_at_5,
            "n_queries": self.n_queries,
            "turn": self.turn,
        }
        if self.turns:
            data["turns"] = [r.to_dict() for r in self.turns]
        return data

    @classmethod
    def from_ranks(cls, ranks: list[int | None], turn: int = 1) -> "MetricsReport":
        return cls(
            hits_at_1=hits_at_k(ranks, 1),
            hits_at_5=hits_at_k(ranks, 5),
            mrr_at_5=mrr_at_k(ranks, 5),
            n_queries=len(ranks),
            turn=turn,
        )

    @classmethod
    def from_turn_ranks(cls, per_turn: list[list[int | None]]) -> "MetricsReport":
        """Multi-turn report: one atom per turn, headline = final turn."""
        atoms = tuple(cls.from_ranks(ranks, turn=t + 1)
                      for t, ranks in enumerate(per_turn))
        last = atoms[-1]
        return cls(last.hits_at_1, last.hits_at_5, last.mrr_at_5,
                   last.n_queries, last.turn, atoms)


class CosineRetriever(BaseEstimator):
    """Exhaustive cosine retriever over an embedding store.

    Parameters
    ----------
    k : int, default=5
        Number of candidates returned per query.
    """

    def __init__(self, k: int = 5):
        self.k = k

    def fit(self, store: EmbeddingStore, y=None) -> "CosineRetriever":
        if store.n_items == 0:
            raise ValueError("store is empty")
        self.store_ = store
        self.n_items_ = store.n_items
        return self

    def _check_fitted(self) -> None:
        if not hasattr(self, "store_"):
            raise ValueError("CosineRetriever is not fitted; call fit first")

    def rank(self, queries: np.ndarray,
             query_ids: list[str] | None = None) -> list[CandidateSet]:
        self._check_fitted()
        return rank_batch(queries, self.store_, self.k, query_ids)

    def predict(self, queries: np.ndarray) -> np.ndarray:
        """Top-1 item_id per query row."""
        self._check_fitted()
        sets = rank_batch(queries, self.store_, 1)
        return np.array([c.entries[0][0] for c in sets])
