"""Query refinement from relevance feedback.

Three closed-form rules over embedding vectors:

* the classical rule mixing the query with means of relevant and
  nonrelevant sets,
* a softmax-weighted extension where both positive and negative feedback
  come from the same top-ranked candidates, weighted by retrieval
  similarity at a sharp temperature,
* the same weighted rule applied to synthetic-caption embeddings of the
  retrieved items instead of their image embeddings.

The refined vector is never renormalized; downstream cosine scoring
absorbs scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .ranking import rank_batch
from .store import EmbeddingStore
from .validation import check_matrix, check_positive, check_vector

DEFAULT_ALPHA = 0.8
DEFAULT_BETA = 0.1
DEFAULT_GAMMA = 0.1
DEFAULT_TAU = 0.05
DEFAULT_K = 5


@dataclass(frozen=True)
class RocchioParams:
    """Mixing weights, softmax temperature, and feedback set size."""

    alpha: float = DEFAULT_ALPHA
    beta: float = DEFAULT_BETA
    gamma: float = DEFAULT_GAMMA
    tau: float = DEFAULT_TAU
    k: int = DEFAULT_K

    def __post_init__(self) -> None:
        check_positive(self.tau, "tau")
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        for name in ("alpha", "beta", "gamma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")


@dataclass(frozen=True)
class FeedbackWeights:
    """Per-candidate positive weights (softmax, sum 1) and their complements."""

    positive: np.ndarray
    negative: np.ndarray


@dataclass(frozen=True)
class RefinementBreakdown:
    """Refined query with the aggregated feedback vectors that produced it.

    Satisfies refined_query = alpha*query + beta*positive_vector
    - gamma*negative_vector up to float rounding.
    """

    refined_query: np.ndarray
    positive_vector: np.ndarray
    negative_vector: np.ndarray
    weights: FeedbackWeights | None


def feedback_weights(similarities, tau: float = DEFAULT_TAU) -> FeedbackWeights:
    """Similarity-softmax weights over one feedback set.

    Positive weight of candidate i is exp(s_i/tau) normalized over the set;
    its negative weight is the complement 1 - w_i.
    """
    sims = check_vector(similarities, name="similarities")
    if sims.shape[0] == 0:
        raise ValueError("similarities must be non-empty")
    check_positive(tau, "tau")
    logits = sims / tau
    logits -= logits.max()
    exp = np.exp(logits)
    positive = exp / exp.sum()
    return FeedbackWeights(positive=positive, negative=1.0 - positive)


def refine_extended(query, candidate_embeddings, similarities,
                    params: RocchioParams = RocchioParams()) -> RefinementBreakdown:
    """Softmax-weighted refinement with both feedback sums over the top-K.

    z' = alpha*z_q + beta*sum_i(w_i*z_i) - gamma*sum_i((1-w_i)*z_i).
    """
    query = check_vector(query, name="query")
    candidates = check_matrix(candidate_embeddings, cols=query.shape[0],
                              name="candidate_embeddings")
    sims = check_vector(similarities, dim=candidates.shape[0], name="similarities")
    weights = feedback_weights(sims, params.tau)
    positive_vector = weights.positive @ candidates
    negative_vector = weights.negative @ candidates
    refined = params.alpha * query + params.beta * positive_vector \
        - params.gamma * negative_vector
    return RefinementBreakdown(refined, positive_vector, negative_vector, weights)


def refine_original(query, relevant, nonrelevant,
                    params: RocchioParams = RocchioParams()) -> RefinementBreakdown:
    """Classical mean-based refinement.

    z' = alpha*z_q + beta*mean(relevant) - gamma*mean(nonrelevant), where the
    nonrelevant set is conventionally the bottom-K of the scored collection.
    """
    query = check_vector(query, name="query")
    relevant = check_matrix(relevant, cols=query.shape[0], name="relevant")
    nonrelevant = check_matrix(nonrelevant, cols=query.shape[0], name="nonrelevant")
    if relevant.shape[0] == 0 or nonrelevant.shape[0] == 0:
        raise ValueError("relevant and nonrelevant sets must be non-empty")
    positive_vector = relevant.mean(axis=0)
    negative_vector = nonrelevant.mean(axis=0)
    refined = params.alpha * query + params.beta * positive_vector \
        - params.gamma * negative_vector
    return RefinementBreakdown(refined, positive_vector, negative_vector, None)


def refine_grf(query, synthetic_caption_embeddings, similarities,
               params: RocchioParams = RocchioParams()) -> RefinementBreakdown:
    """Weighted refinement over synthetic-caption embeddings.

    Identical arithmetic to refine_extended; the feedback vectors are the
    retrieved items' synthetic-caption embeddings while the weights still
    come from the original query-to-image similarities.
    """
    return refine_extended(query, synthetic_caption_embeddings, similarities, params)


def _feedback_rows(store: EmbeddingStore, candidate_ids: list[str],
                   query: np.ndarray, synthetic: bool) -> np.ndarray:
    rows = []
    for item_id in candidate_ids:
        item = store.item(item_id)
        if synthetic:
            rows.append(store.synthetic_caption_embeddings[item.synthetic_row])
        else:
            pos = store._item_index[item_id]
            rows.append(store.item_feedback_embedding(pos, query))
    return np.asarray(rows, dtype=np.float64)


class _RefinerBase(BaseEstimator, TransformerMixin):
    """Shared fit/transform plumbing for store-backed refiners."""

    def fit(self, store: EmbeddingStore, y=None):
        if store.n_items == 0:
            raise ValueError("store is empty")
        self.store_ = store
        return self

    def _check_fitted(self) -> None:
        if not hasattr(self, "store_"):
            raise ValueError(f"{type(self).__name__} is not fitted; call fit first")

    def _params(self) -> RocchioParams:
        return RocchioParams(alpha=self.alpha, beta=self.beta, gamma=self.gamma,
                             tau=self.tau, k=self.k)

    def transform(self, queries: np.ndarray) -> np.ndarray:
        """Refine each query row against the fitted store."""
        self._check_fitted()
        queries = check_matrix(queries, cols=self.store_.dim, name="queries")
        return np.stack([self._refine_one(q) for q in queries])


class ExtendedRocchioRefiner(_RefinerBase):
    """Transformer applying softmax-weighted top-K refinement per query.

    Parameters
    ----------
    alpha, beta, gamma : float
        Mixing weights for the query, positive, and negative terms.
    tau : float, default=0.05
        Softmax temperature over feedback similarities.
    k : int, default=5
        Feedback set size (top-k of the store ranking).
    """

    def __init__(self, alpha: float = DEFAULT_ALPHA, beta: float = DEFAULT_BETA,
                 gamma: float = DEFAULT_GAMMA, tau: float = DEFAULT_TAU,
                 k: int = DEFAULT_K):
        self.alpha = alpha
        self.beta = beta
        self.gamma = gamma
        self.tau = tau
        self.k = k

    def _refine_one(self, query: np.ndarray) -> np.ndarray:
        candidates = rank_batch(query[None, :], self.store_, self.k)[0]
        rows = _feedback_rows(self.store_, candidates.item_ids, query, synthetic=False)
        sims = np.asarray(candidates.scores)
        return refine_extended(query, rows, sims, self._params()).refined_query


class GenerativeFeedbackRefiner(ExtendedRocchioRefiner):
    """Weighted refinement using synthetic-caption embeddings as feedback."""

    def _refine_one(self, query: np.ndarray) -> np.ndarray:
        candidates = rank_batch(query[None, :], self.store_, self.k)[0]
        rows = _feedback_rows(self.store_, candidates.item_ids, query, synthetic=True)
        sims = np.asarray(candidates.scores)
        return refine_grf(query, rows, sims, self._params()).refined_query


class OriginalRocchioRefiner(_RefinerBase):
    """Transformer applying classical mean-based refinement per query.

    The relevant set is the top-k of the ranking, the nonrelevant set the
    bottom-k of the full collection.
    """

    def __init__(self, alpha: float = DEFAULT_ALPHA, beta: float = DEFAULT_BETA,
                 gamma: float = DEFAULT_GAMMA, tau: float = DEFAULT_TAU,
                 k: int = DEFAULT_K):
        self.alpha = alpha
        self.beta = beta
        self.gamma = gamma
        self.tau = tau
        self.k = k

    def _refine_one(self, query: np.ndarray) -> np.ndarray:
        full = rank_batch(query[None, :], self.store_, self.store_.n_items)[0]
        k = min(self.k, self.store_.n_items)
        top_ids = full.item_ids[:k]
        bottom_ids = full.item_ids[-k:]
        relevant = _feedback_rows(self.store_, top_ids, query, synthetic=False)
        nonrelevant = _feedback_rows(self.store_, bottom_ids, query, synthetic=False)
        return refine_original(query, relevant, nonrelevant, self._params()).refined_query
