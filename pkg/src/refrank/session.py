"""Multi-turn retrieval sessions under pluggable feedback strategies.

A turn ranks with the current query embedding, gathers feedback from the
top of that ranking, refines, and stores the refined embedding for the
next turn.  Feedback at turn t therefore always comes from turn t's own
ranking, and turn t+1 ranks the embedding refined from it.

Strategies: ``none`` (fixed point), ``prf_original`` (mean-based, bottom
of the collection as nonrelevant), ``prf_extended`` (softmax-weighted
top-k), ``grf`` (weighted synthetic-caption feedback), ``afs`` /
``afs_prf`` (trained attention summarizer, with or without caption
features), and ``explicit`` (averaging in further captions of the target,
simulated from the item's caption pool or supplied live).

Each session is single-writer; distinct sessions share the immutable
store freely.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ranking import CandidateSet, MetricsReport, rank_batch
from .rocchio import RocchioParams, refine_extended, refine_grf, refine_original
from .store import EmbeddingStore
from .validation import check_vector, resolve_seed

STRATEGIES = ("none", "prf_original", "prf_extended", "grf", "afs", "afs_prf", "explicit")

ANCHOR_MODES = ("previous", "original")
EXPLICIT_MODES = ("running", "pairwise")


@dataclass
class SessionConfig:
    """Strategy-independent knobs of a session run.

    ``anchor`` picks the query vector fed to refinement on turns after the
    first: the previously refined embedding (iterative composition) or the
    original query.  ``explicit_mode`` picks between a running mean over
    the initial query plus every feedback caption seen so far and a
    pairwise mean of the current embedding with the newest caption.
    """

    strategy: str = "none"
    params: RocchioParams = field(default_factory=RocchioParams)
    anchor: str = "previous"
    explicit_mode: str = "running"
    k_display: int = 10

    def __post_init__(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}; one of {STRATEGIES}")
        if self.anchor not in ANCHOR_MODES:
            raise ValueError(f"anchor must be one of {ANCHOR_MODES}")
        if self.explicit_mode not in EXPLICIT_MODES:
            raise ValueError(f"explicit_mode must be one of {EXPLICIT_MODES}")
        if self.k_display < self.params.k:
            self.k_display = self.params.k


@dataclass(frozen=True)
class TurnResult:
    """Outcome of one turn: the ranking shown and the embedding that made it."""

    turn: int
    candidates: CandidateSet
    embedding: np.ndarray
    truth_rank: int | None


@dataclass
class SessionState:
    """Mutable per-session record; history is append-only.

    ``region_marks`` maps item id to marked patch entries: a bare index
    means a relevant patch, a ``(index, relevant)`` pair carries an
    explicit polarity.
    """

    query_id: str
    initial_embedding: np.ndarray
    current_embedding: np.ndarray
    turn: int = 0
    history: list[TurnResult] = field(default_factory=list)
    truth_item_id: str | None = None
    query_caption_row: int | None = None
    explicit_pool: list[int] = field(default_factory=list)
    explicit_used: list[int] = field(default_factory=list)
    explicit_embeddings: list[np.ndarray] = field(default_factory=list)
    relevant_marks: list[str] = field(default_factory=list)
    irrelevant_marks: list[str] = field(default_factory=list)
    region_marks: dict[str, list[int | tuple[int, bool]]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        """JSON-serializable history for replay and UI consumption."""
        return {
            "query_id": self.query_id,
            "truth_item_id": self.truth_item_id,
            "turns": [
                {
                    "turn": r.turn,
                    "truth_rank": r.truth_rank,
                    "candidates": [
                        {"item_id": item_id, "score": score}
                        for item_id, score in r.candidates.entries
                    ],
                }
                for r in self.history
            ],
        }


def simulate_explicit_pool(store: EmbeddingStore, query_caption_id: str,
                           seed: int | None = None) -> list[int]:
    """Remaining caption rows of the queried item, in seeded random order."""
    item = store.caption_owner(query_caption_id)
    if len(item.captions) < 2:
        raise ValueError(
            f"item {item.item_id} has {len(item.captions)} caption(s); "
            "explicit feedback needs at least 2"
        )
    query_row = store.caption_row(query_caption_id)
    rows = [
        item.caption_row_start + j
        for j in range(item.caption_row_count)
        if item.caption_row_start + j != query_row
    ]
    rng = np.random.default_rng(resolve_seed(seed))
    rng.shuffle(rows)
    return rows


def start_session(store: EmbeddingStore, query_caption_id: str | None = None,
                  query_embedding: np.ndarray | None = None,
                  seed: int | None = None, query_id: str | None = None) -> SessionState:
    """Create a session from a stored caption query or a raw embedding."""
    if query_caption_id is not None:
        row = store.caption_row(query_caption_id)
        embedding = np.asarray(store.caption_embeddings[row], dtype=np.float64)
        truth = store.caption_owner(query_caption_id).item_id
        pool: list[int] = []
        owner = store.caption_owner(query_caption_id)
        if len(owner.captions) >= 2:
            pool = simulate_explicit_pool(store, query_caption_id, seed)
        return SessionState(
            query_id=query_id or query_caption_id,
            initial_embedding=embedding.copy(),
            current_embedding=embedding.copy(),
            truth_item_id=truth,
            query_caption_row=row,
            explicit_pool=pool,
        )
    if query_embedding is None:
        raise ValueError("provide query_caption_id or query_embedding")
    embedding = check_vector(query_embedding, dim=store.dim, name="query_embedding")
    return SessionState(
        query_id=query_id or "live",
        initial_embedding=embedding.copy(),
        current_embedding=embedding.copy(),
    )


def explicit_refine(state: SessionState, new_caption_embedding: np.ndarray,
                    mode: str = "running") -> np.ndarray:
    """Fold one feedback caption into the query by averaging.

    Running mode: mean of the initial embedding and every feedback caption
    supplied so far.  Pairwise mode: mean of the current embedding and the
    new caption.  The caller records consumption in the session state.
    """
    cap = check_vector(new_caption_embedding,
                       dim=state.initial_embedding.shape[0],
                       name="new_caption_embedding")
    if mode == "pairwise":
        return (state.current_embedding + cap) / 2.0
    used = [state.initial_embedding] + state.explicit_embeddings + [cap]
    return np.mean(used, axis=0)


def _refine_explicit(state: SessionState, store: EmbeddingStore, mode: str) -> np.ndarray:
    if not state.explicit_pool:
        if state.query_caption_row is None:
            raise ValueError("explicit strategy needs a stored caption query")
        if not state.explicit_used:
            raise ValueError("explicit strategy requires an item with >= 2 captions")
        # Pool exhausted: the session becomes a fixed point rather than failing,
        # so a 5-caption item supports exactly 5 turns (4 refinements).
        return state.current_embedding
    row = state.explicit_pool.pop(0)
    cap = np.asarray(store.caption_embeddings[row], dtype=np.float64)
    refined = explicit_refine(state, cap, mode)
    state.explicit_embeddings.append(cap)
    state.explicit_used.append(row)
    return refined


def _feedback_embeddings(store: EmbeddingStore, item_ids: list[str],
                         query: np.ndarray, synthetic: bool) -> np.ndarray:
    rows = []
    for item_id in item_ids:
        item = store.item(item_id)
        if synthetic:
            rows.append(store.synthetic_caption_embeddings[item.synthetic_row])
        else:
            rows.append(store.item_feedback_embedding(
                store._item_index[item_id], query))
    return np.asarray(rows, dtype=np.float64)


def _refine_from_marks(state: SessionState, store: EmbeddingStore,
                       anchor_q: np.ndarray, params: RocchioParams) -> np.ndarray:
    """Classical refinement from live user marks.

    Marked-relevant items share uniform positive weight, marked-irrelevant
    items uniform negative weight; an empty side contributes nothing.
    """
    refined = params.alpha * anchor_q
    if state.relevant_marks:
        rel = _feedback_embeddings(store, state.relevant_marks, anchor_q, False)
        refined = refined + params.beta * rel.mean(axis=0)
    if state.irrelevant_marks:
        irr = _feedback_embeddings(store, state.irrelevant_marks, anchor_q, False)
        refined = refined - params.gamma * irr.mean(axis=0)
    return refined


def _refine(state: SessionState, config: SessionConfig, store: EmbeddingStore,
            full_ranking: CandidateSet, summarizer=None) -> np.ndarray:
    strategy = config.strategy
    params = config.params
    anchor_q = (state.initial_embedding if config.anchor == "original"
                else state.current_embedding)

    if strategy == "none":
        return state.current_embedding
    if strategy == "explicit":
        return _refine_explicit(state, store, config.explicit_mode)
    if state.relevant_marks or state.irrelevant_marks:
        return _refine_from_marks(state, store, anchor_q, params)

    k = min(params.k, store.n_items)
    top_ids = full_ranking.item_ids[:k]
    top_sims = np.asarray(full_ranking.scores[:k])

    if strategy == "prf_extended":
        rows = _feedback_embeddings(store, top_ids, anchor_q, synthetic=False)
        return refine_extended(anchor_q, rows, top_sims, params).refined_query
    if strategy == "grf":
        rows = _feedback_embeddings(store, top_ids, anchor_q, synthetic=True)
        return refine_grf(anchor_q, rows, top_sims, params).refined_query
    if strategy == "prf_original":
        bottom_ids = full_ranking.item_ids[-k:]
        relevant = _feedback_embeddings(store, top_ids, anchor_q, synthetic=False)
        nonrelevant = _feedback_embeddings(store, bottom_ids, anchor_q, synthetic=False)
        return refine_original(anchor_q, relevant, nonrelevant, params).refined_query
    if strategy in ("afs", "afs_prf"):
        if summarizer is None:
            raise ValueError(f"strategy {strategy!r} requires a trained summarizer")
        return summarizer.refine_query(
            store, state, anchor_q, top_ids,
            include_captions=(strategy == "afs"), params=params,
        )
    raise ValueError(f"unknown strategy {strategy!r}")


def run_turn(state: SessionState, config: SessionConfig, store: EmbeddingStore,
             summarizer=None) -> TurnResult:
    """Rank, record, gather feedback, refine, and store the new embedding."""
    full = rank_batch(state.current_embedding[None, :], store,
                      store.n_items, [state.query_id])[0]
    k_display = min(config.k_display, store.n_items)
    shown = CandidateSet(full.query_id, full.entries[:k_display], k_display,
                         config.k_display > store.n_items)
    truth_rank = (full.rank_of(state.truth_item_id)
                  if state.truth_item_id is not None else None)
    result = TurnResult(
        turn=state.turn + 1,
        candidates=shown,
        embedding=state.current_embedding.copy(),
        truth_rank=truth_rank,
    )
    state.history.append(result)
    state.turn += 1
    state.current_embedding = np.asarray(
        _refine(state, config, store, full, summarizer), dtype=np.float64)
    if not np.all(np.isfinite(state.current_embedding)):
        raise ValueError("refined embedding is non-finite")
    return result


def run_multi_turn(state: SessionState, config: SessionConfig, store: EmbeddingStore,
                   turns: int, summarizer=None) -> list[TurnResult]:
    """T sequential turns; turn t>1 ranks the embedding refined at turn t-1."""
    if turns < 1:
        raise ValueError(f"turns must be >= 1, got {turns}")
    return [run_turn(state, config, store, summarizer) for _ in range(turns)]


def _display_config(config: SessionConfig) -> SessionConfig:
    """The rank-only twin of a config: same display knobs, no refinement."""
    return SessionConfig(strategy="none", params=config.params,
                         anchor=config.anchor,
                         explicit_mode=config.explicit_mode,
                         k_display=config.k_display)


def interactive_start(store: EmbeddingStore, query_caption_id: str,
                      config: SessionConfig, seed: int | None = None,
                      query_id: str | None = None) -> tuple[SessionState, TurnResult]:
    """Open an interactive session and rank the raw query as turn 1.

    Interactive use splits run_turn's rank-refine atom: the displayed
    ranking always comes first, and refinement waits for the caller's
    feedback (interactive_turn).  The configured strategy therefore does
    not touch the query until feedback arrives.
    """
    state = start_session(store, query_caption_id, seed=seed, query_id=query_id)
    return state, run_turn(state, _display_config(config), store)


def interactive_turn(state: SessionState, config: SessionConfig,
                     store: EmbeddingStore, summarizer=None,
                     relevant=(), irrelevant=(), regions=None,
                     explicit_caption_id: str | None = None) -> TurnResult:
    """Fold one round of user feedback in, then rank the refined query.

    Item marks override the automatic strategy for this round only;
    region marks bias the summarizer's attention; with no marks at all
    the configured strategy refines from its own top-K, so an empty
    round equals one offline feedback turn.  Under the explicit strategy
    a caller-chosen caption replaces the simulated pool draw.
    """
    state.relevant_marks = list(relevant)
    state.irrelevant_marks = list(irrelevant)
    state.region_marks = {key: list(value)
                          for key, value in (regions or {}).items()}
    full = rank_batch(state.current_embedding[None, :], store,
                      store.n_items, [state.query_id])[0]
    if config.strategy == "explicit" and explicit_caption_id is not None:
        row = store.caption_row(explicit_caption_id)
        cap = np.asarray(store.caption_embeddings[row], dtype=np.float64)
        refined = explicit_refine(state, cap, config.explicit_mode)
        state.explicit_embeddings.append(cap)
        if row in state.explicit_pool:
            state.explicit_pool.remove(row)
        state.explicit_used.append(row)
    else:
        refined = _refine(state, config, store, full, summarizer)
    state.current_embedding = np.asarray(refined, dtype=np.float64)
    if not np.all(np.isfinite(state.current_embedding)):
        raise ValueError("refined embedding is non-finite")
    state.relevant_marks, state.irrelevant_marks = [], []
    state.region_marks = {}
    return run_turn(state, _display_config(config), store)


def evaluate(store: EmbeddingStore, config: SessionConfig, turns: int = 1,
             summarizer=None, seed: int | None = None,
             caption_ids: list[str] | None = None):
    """Run every query through a session; per-turn metrics plus raw runs.

    Returns (MetricsReport with per-turn breakdown, list of per-query run
    records).  Queries default to every caption in the store.
    """
    if caption_ids is None:
        caption_ids = store.caption_ids()
    if not caption_ids:
        raise ValueError("no queries to evaluate")
    seed = resolve_seed(seed)
    per_turn_ranks: list[list[int | None]] = [[] for _ in range(turns)]
    runs = []
    for cap_id in caption_ids:
        state = start_session(store, cap_id, seed=seed)
        results = run_multi_turn(state, config, store, turns, summarizer)
        for t, r in enumerate(results):
            per_turn_ranks[t].append(r.truth_rank)
        runs.append({
            "query_id": cap_id,
            "truth_item_id": state.truth_item_id,
            "turns": [
                {"turn": r.turn, "truth_rank": r.truth_rank,
                 "ranked_ids": r.candidates.item_ids}
                for r in results
            ],
        })
    report = MetricsReport.from_turn_ranks(per_turn_ranks)
    return report, runs
