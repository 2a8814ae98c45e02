"""Attention-based feedback summarizer: model, training, and session glue.

The summarizer replaces hand-weighted pseudo feedback: a small two-block
attention model reads the query tokens against the token features of the
current top-K items and emits a positive update direction, while its
cross-attention mass decides how strongly each item is pushed away.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from ..ranking import CandidateSet
from ..rocchio import RocchioParams
from ..store import EmbeddingStore
from .checkpoint import load_checkpoint, save_checkpoint
from .feedback import (
    RegionMark,
    SaliencyMap,
    accumulate_item_scores,
    apply_region_bias,
    negative_weights,
    refine_query_afs,
    region_bias_vector,
    saliency,
)
from .model import AFSOutput, AFSParams, AttentionScores, forward
from .sequence import (
    AFSConfig,
    RelevanceSequence,
    build_relevance_sequence,
    stack_sequences,
)
from .train import (
    AdamW,
    LossReport,
    TrainConfig,
    TrainHistory,
    TrainingTarget,
    batch_loss,
    cosine_losses,
    loss_caption,
    loss_image,
    train,
)

__all__ = [
    "AFSConfig", "AFSOutput", "AFSParams", "AttentionScores", "AdamW",
    "LossReport", "RegionMark", "RelevanceSequence", "SaliencyMap",
    "Summarizer", "TrainConfig", "TrainHistory", "TrainingTarget",
    "accumulate_item_scores", "apply_region_bias", "batch_loss",
    "build_relevance_sequence", "cosine_losses", "forward",
    "load_checkpoint", "loss_caption", "loss_image", "negative_weights",
    "refine_query_afs", "region_bias_vector", "saliency", "saliency_items",
    "save_checkpoint", "stack_sequences", "train",
]


def saliency_items(output: AFSOutput, seq: RelevanceSequence,
                   include_captions: bool) -> list[dict]:
    """JSON-ready per-item saliency entries for display consumers.

    Each entry carries the per-patch (and, with captions, per-token)
    salience in [0, 1] plus accumulated attention scores; ``score`` is
    the mean of the available modality scores.
    """
    sal = saliency(output.cross_attention, seq)
    image_scores, caption_scores = accumulate_item_scores(
        output.cross_attention, seq)
    items = []
    for j, item_id in enumerate(seq.item_ids):
        entry = {
            "item_id": item_id,
            "image_score": float(image_scores[j]),
            "score": float(image_scores[j]),
            "patches": [float(v) for v in sal.image[j]],
        }
        if include_captions:
            entry["caption_score"] = float(caption_scores[j])
            entry["score"] = float((image_scores[j] + caption_scores[j]) / 2)
            entry["tokens"] = [float(v) for v in sal.caption[j]]
        items.append(entry)
    return items


class Summarizer:
    """A trained model bundled with its config, ready for session use.

    Implements the refine_query hook the session loop dispatches to for
    the attention-summarizer strategies.
    """

    def __init__(self, params: AFSParams, config: AFSConfig,
                 region_bias_magnitude: float = 1.0):
        self.params = params
        self.config = config
        self.region_bias_magnitude = region_bias_magnitude
        self.history: TrainHistory | None = None

    @classmethod
    def fit(cls, store: EmbeddingStore, config: AFSConfig | None = None,
            train_config: TrainConfig | None = None) -> "Summarizer":
        config = config or AFSConfig.from_store(store)
        params, history = train(store, config, train_config or TrainConfig())
        model = cls(params, config)
        model.history = history
        return model

    @classmethod
    def load(cls, path) -> "Summarizer":
        params, config = load_checkpoint(path)
        return cls(params, config)

    def save(self, path):
        return save_checkpoint(self.params, self.config, path)

    def _sequence_inputs(self, item_ids):
        """Feedback ids plus a config sized to them.

        The attention blocks carry no positional encoding, so a trained
        model reads any feedback set size; only the sequence assembly
        needs its k adjusted.
        """
        ids = (list(item_ids.item_ids) if isinstance(item_ids, CandidateSet)
               else list(item_ids))
        if len(ids) == self.config.k:
            return ids, self.config
        return ids, replace(self.config, k=len(ids))

    def summarize(self, store: EmbeddingStore, query_row: int,
                  item_ids, include_captions: bool = True,
                  cross_logit_bias: np.ndarray | None = None):
        """Forward one stored query against feedback items."""
        ids, config = self._sequence_inputs(item_ids)
        seq = build_relevance_sequence(store, ids, config, include_captions)
        output = forward(
            store.query_tokens[query_row],
            store.query_token_mask[query_row].astype(bool),
            seq, self.params, self.config,
            cross_logit_bias=cross_logit_bias,
        )
        return output, seq

    def refine_query(self, store: EmbeddingStore, state, anchor_q: np.ndarray,
                     top_ids, include_captions: bool,
                     params: RocchioParams) -> np.ndarray:
        """Session hook: refine the anchor embedding from top-K feedback."""
        if state.query_caption_row is None:
            raise ValueError(
                "summarizer strategies need a stored caption query with "
                "token features")
        bias = None
        if state.region_marks:
            ids, seq_config = self._sequence_inputs(top_ids)
            seq_probe = build_relevance_sequence(store, ids, seq_config,
                                                 include_captions)
            marks = []
            id_to_index = {item_id: j for j, item_id in
                           enumerate(seq_probe.item_ids)}
            for item_id, entries in state.region_marks.items():
                if item_id not in id_to_index:
                    continue
                keep = tuple(e if isinstance(e, int) else e[0]
                             for e in entries
                             if isinstance(e, int) or e[1])
                drop = tuple(e[0] for e in entries
                             if not isinstance(e, int) and not e[1])
                if keep:
                    marks.append(RegionMark(id_to_index[item_id], keep))
                if drop:
                    marks.append(RegionMark(id_to_index[item_id], drop,
                                            relevant=False))
            if marks:
                bias = region_bias_vector(seq_probe, marks,
                                          self.region_bias_magnitude,
                                          self.config.p)
        output, seq = self.summarize(store, state.query_caption_row, top_ids,
                                     include_captions, cross_logit_bias=bias)
        image_rows = np.asarray([
            store.image_embeddings[store.item(i).image_row] for i in seq.item_ids
        ], dtype=np.float64)
        caption_rows = None
        if include_captions:
            caption_rows = np.asarray([
                store.synthetic_caption_embeddings[store.item(i).synthetic_row]
                for i in seq.item_ids
            ], dtype=np.float64)
        breakdown = refine_query_afs(anchor_q, output, seq, image_rows,
                                     caption_rows, params)
        return breakdown.refined_query
