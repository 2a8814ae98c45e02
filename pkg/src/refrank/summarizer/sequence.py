"""Relevance-sequence assembly for the attention summarizer.

A relevance sequence concatenates token features of the current top-K
feedback items: every item's image patches first, then every item's
synthetic-caption tokens.  Positions carry (modality, item) labels and a
validity mask so attention can ignore padding and saliency can split
scores back per item.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ..ranking import CandidateSet
from ..store import EmbeddingStore

LOSS_MODES = ("image_only", "caption_only", "both")

IMAGE, CAPTION = 0, 1


@dataclass(frozen=True)
class AFSConfig:
    """Shape and training-mode knobs of the summarizer model.

    d_t is the token width the model computes in, d the global embedding
    width it projects back to.  p, s, and s_q are the patch, caption, and
    query token lengths; k the number of feedback items per sequence.
    """

    d_t: int = 16
    d: int = 32
    n_h: int = 4
    s: int = 12
    p: int = 9
    s_q: int = 12
    k: int = 5
    seed: int = 0
    loss_mode: str = "both"
    ffn: str = "off"

    def __post_init__(self) -> None:
        for name in ("d_t", "d", "n_h", "s", "p", "s_q", "k"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.d_t % self.n_h:
            raise ValueError(
                f"d_t ({self.d_t}) must be divisible by n_h ({self.n_h})")
        if self.loss_mode not in LOSS_MODES:
            raise ValueError(f"loss_mode must be one of {LOSS_MODES}")
        if self.ffn != "off":
            raise ValueError(
                "only the attention-only block layout is supported (ffn='off')")

    @property
    def d_h(self) -> int:
        return self.d_t // self.n_h

    def sequence_length(self, include_captions: bool = True) -> int:
        per_item = self.p + self.s if include_captions else self.p
        return per_item * self.k

    @classmethod
    def from_store(cls, store: EmbeddingStore, **overrides) -> "AFSConfig":
        """Read the shape fields off a store's tensors."""
        fields = dict(
            d=store.dim,
            d_t=store.token_dim,
            p=store.image_tokens.shape[1],
            s=store.synthetic_caption_tokens.shape[1],
            s_q=store.query_tokens.shape[1],
        )
        fields.update(overrides)
        return cls(**fields)


@dataclass(frozen=True)
class RelevanceSequence:
    """Concatenated feedback features with per-position provenance."""

    features: np.ndarray
    mask: np.ndarray
    modality: np.ndarray
    item_index: np.ndarray
    item_ids: tuple[str, ...]
    include_captions: bool

    def positions(self, modality: int, item: int) -> np.ndarray:
        """Valid position indices of one (modality, item) block."""
        hit = (self.modality == modality) & (self.item_index == item) & self.mask
        return np.flatnonzero(hit)


def build_relevance_sequence(store: EmbeddingStore, top_k_items,
                             config: AFSConfig,
                             include_captions: bool = True) -> RelevanceSequence:
    """Assemble the feedback token sequence for one query's top-K items.

    Accepts a CandidateSet or a plain list of item ids.  With captions
    excluded the sequence holds image patches only.
    """
    if isinstance(top_k_items, CandidateSet):
        item_ids = list(top_k_items.item_ids[:config.k])
    else:
        item_ids = list(top_k_items)[:config.k]
    if len(item_ids) != config.k:
        raise ValueError(
            f"need {config.k} feedback items, got {len(item_ids)}")
    if store.image_tokens.shape[0] == 0:
        raise ValueError("store has no image token features")
    if include_captions and store.synthetic_caption_tokens.shape[0] == 0:
        raise ValueError("store has no synthetic-caption token features")

    blocks, masks, modality, item_index = [], [], [], []

    def extend(values: np.ndarray, mask: np.ndarray, kind: int, j: int) -> None:
        blocks.append(values)
        masks.append(mask.astype(bool))
        modality.append(np.full(values.shape[0], kind, dtype=np.int64))
        item_index.append(np.full(values.shape[0], j, dtype=np.int64))

    for j, item_id in enumerate(item_ids):
        item = store.item(item_id)
        extend(store.image_tokens[item.image_row],
               store.image_token_mask[item.image_row], IMAGE, j)
    if include_captions:
        for j, item_id in enumerate(item_ids):
            item = store.item(item_id)
            extend(store.synthetic_caption_tokens[item.synthetic_row],
                   store.synthetic_caption_token_mask[item.synthetic_row],
                   CAPTION, j)

    return RelevanceSequence(
        features=np.concatenate(blocks, axis=0),
        mask=np.concatenate(masks),
        modality=np.concatenate(modality),
        item_index=np.concatenate(item_index),
        item_ids=tuple(item_ids),
        include_captions=include_captions,
    )


def stack_sequences(sequences: list[RelevanceSequence]) -> RelevanceSequence:
    """Batch same-shape sequences along a new leading axis."""
    if not sequences:
        raise ValueError("no sequences to stack")
    first = sequences[0]
    for seq in sequences[1:]:
        if seq.features.shape != first.features.shape:
            raise ValueError("sequences in a batch must share one shape")
        if seq.include_captions != first.include_captions:
            raise ValueError("sequences in a batch must share caption mode")
    return replace(
        first,
        features=np.stack([s.features for s in sequences]),
        mask=np.stack([s.mask for s in sequences]),
        item_ids=tuple(i for s in sequences for i in s.item_ids),
    )
