"""Turning attention evidence into query refinement and saliency.

Cross-attention scores are accumulated per feedback item and modality,
converted to negative-feedback weights with a temperature softmax over
negated scores, and folded into the standard alpha/beta/gamma update:
the CLS readout acts as the positive vector, the attention-downweighted
items as the negative one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..rocchio import RefinementBreakdown, RocchioParams
from ..validation import check_matrix, check_vector
from .model import AFSOutput, AttentionScores
from .sequence import CAPTION, IMAGE, RelevanceSequence


def _accumulated_positions(attn: AttentionScores) -> np.ndarray:
    """Sum raw scores over heads and valid query tokens -> one value per
    sequence position."""
    scores = attn.scores
    if scores.ndim != 3:
        raise ValueError("per-query attention expected, got batched scores")
    valid = np.asarray(attn.query_mask, dtype=bool)
    return scores[:, valid, :].sum(axis=(0, 1))


def accumulate_item_scores(attn: AttentionScores,
                           seq: RelevanceSequence) -> tuple[np.ndarray, np.ndarray | None]:
    """Per-item attention mass: head/query-token sums, then the mean over
    each item's valid positions, separately per modality."""
    totals = _accumulated_positions(attn)
    k = int(seq.item_index.max()) + 1

    def per_item(kind: int) -> np.ndarray:
        out = np.zeros(k)
        for j in range(k):
            pos = seq.positions(kind, j)
            if pos.size:
                out[j] = totals[pos].mean()
        return out

    image_scores = per_item(IMAGE)
    caption_scores = per_item(CAPTION) if seq.include_captions else None
    return image_scores, caption_scores


def negative_weights(item_scores: np.ndarray, tau: float) -> np.ndarray:
    """Softmax over negated scores: the less attended, the more negative."""
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    scores = check_vector(item_scores, name="item_scores")
    logits = -scores / tau
    logits -= logits.max()
    exps = np.exp(logits)
    return exps / exps.sum()


def refine_query_afs(z_q: np.ndarray, output: AFSOutput,
                     seq: RelevanceSequence,
                     image_embeddings: np.ndarray,
                     caption_embeddings: np.ndarray | None,
                     params: RocchioParams) -> RefinementBreakdown:
    """Attention-guided update of the query embedding.

    The CLS readout is the positive direction.  The negative direction
    averages the feedback items' global embeddings under the negated
    attention weights; with both modalities present each contributes half,
    with images only the image term stands alone.
    """
    query = check_vector(z_q, name="z_q")
    z_cls = np.asarray(output.z_cls.data, dtype=np.float64).reshape(-1)
    if z_cls.shape != query.shape:
        raise ValueError(
            f"z_cls dim {z_cls.shape[0]} does not match query dim {query.shape[0]}")
    image_embeddings = check_matrix(image_embeddings, cols=query.shape[0],
                                    name="image_embeddings")
    image_scores, caption_scores = accumulate_item_scores(
        output.cross_attention, seq)
    w_img = negative_weights(image_scores, params.tau)
    negative = w_img @ image_embeddings
    if seq.include_captions:
        if caption_embeddings is None:
            raise ValueError("caption embeddings required when the sequence "
                             "includes captions")
        caption_embeddings = check_matrix(caption_embeddings,
                                          cols=query.shape[0],
                                          name="caption_embeddings")
        w_cap = negative_weights(caption_scores, params.tau)
        negative = (negative + w_cap @ caption_embeddings) / 2.0
    refined = (params.alpha * query + params.beta * z_cls
               - params.gamma * negative)
    return RefinementBreakdown(
        refined_query=refined,
        positive_vector=z_cls,
        negative_vector=negative,
        weights=None,
    )


@dataclass(frozen=True)
class SaliencyMap:
    """Min-max normalized attention mass per item and position, in [0, 1]."""

    image: np.ndarray
    caption: np.ndarray | None


def _normalize_block(values: np.ndarray, valid: np.ndarray) -> np.ndarray:
    out = np.zeros_like(values, dtype=np.float64)
    pool = values[valid]
    if pool.size == 0:
        return out
    lo, hi = pool.min(), pool.max()
    if hi - lo == 0:
        return out
    out[valid] = (pool - lo) / (hi - lo)
    return out


def saliency(attn: AttentionScores, seq: RelevanceSequence) -> SaliencyMap:
    """Per-position salience for display overlays.

    Image and caption subsequences are min-max normalized independently;
    a constant subsequence maps to all zeros because it carries no
    contrast to show.
    """
    totals = _accumulated_positions(attn)
    k = int(seq.item_index.max()) + 1

    def block(kind: int, length: int) -> np.ndarray:
        selector = seq.modality == kind
        values = _normalize_block(totals[selector], seq.mask[selector])
        return values.reshape(k, length)

    image = block(IMAGE, np.count_nonzero(seq.modality == IMAGE) // k)
    caption = None
    if seq.include_captions:
        caption = block(CAPTION, np.count_nonzero(seq.modality == CAPTION) // k)
    return SaliencyMap(image=image, caption=caption)


@dataclass(frozen=True)
class RegionMark:
    """A user-marked patch set on one feedback item."""

    item_index: int
    patches: tuple[int, ...]
    relevant: bool = True


def region_bias_vector(seq: RelevanceSequence, marks: list[RegionMark],
                       magnitude: float, patches_per_item: int) -> np.ndarray:
    """Additive pre-softmax logit bias implementing region marks."""
    if magnitude < 0:
        raise ValueError("magnitude must be nonnegative")
    bias = np.zeros(seq.mask.shape[0])
    for mark in marks:
        image_positions = np.flatnonzero(
            (seq.modality == IMAGE) & (seq.item_index == mark.item_index))
        if image_positions.size == 0:
            raise ValueError(
                f"item index {mark.item_index} has no image positions")
        for patch in mark.patches:
            if not 0 <= patch < patches_per_item:
                raise ValueError(
                    f"patch index {patch} out of range for {patches_per_item} "
                    "patches")
            sign = 1.0 if mark.relevant else -1.0
            bias[image_positions[patch]] += sign * magnitude
    return bias


def apply_region_bias(attn: AttentionScores, seq: RelevanceSequence,
                      marks: list[RegionMark], magnitude: float,
                      patches_per_item: int) -> np.ndarray:
    """Re-softmax the stored attention logits with region marks applied.

    Marked-relevant patches gain pre-softmax logit, marked-irrelevant
    patches lose it; rows then renormalize to sum 1 over valid positions.
    """
    bias = region_bias_vector(seq, marks, magnitude, patches_per_item)
    logits = np.where(seq.mask, attn.logits + bias, -np.inf)
    shift = logits.max(axis=-1, keepdims=True)
    exps = np.exp(logits - shift)
    return exps / exps.sum(axis=-1, keepdims=True)
