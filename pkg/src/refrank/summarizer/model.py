"""Two-block attention model with a learnable CLS readout.

Forward pipeline: prepend the CLS token to the query tokens, pre-layer-norm,
multi-head cross-attention against the projected relevance sequence with a
residual connection, pre-layer-norm again, multi-head self-attention over
the query sequence with a residual, then a linear projection of the CLS
position back to the global embedding width.  No feed-forward sublayers and
no positional encodings on the relevance sequence, so the feedback items
form a set rather than a list.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..autodiff import Tensor, attention, concat, layer_norm, softmax_rows
from .sequence import AFSConfig, RelevanceSequence


def _linear_init(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    return rng.normal(scale=1.0 / np.sqrt(rows), size=(rows, cols))


@dataclass
class AFSParams:
    """All learnable tensors of the summarizer, keyed by name."""

    tensors: dict[str, Tensor]

    @classmethod
    def init(cls, config: AFSConfig, dtype=np.float32) -> "AFSParams":
        rng = np.random.default_rng(config.seed)
        d_t, d = config.d_t, config.d
        entries: dict[str, np.ndarray] = {
            "cls": rng.normal(scale=1.0 / np.sqrt(d_t), size=(d_t,)),
            "input_proj_w": _linear_init(rng, d_t, d_t),
            "input_proj_b": np.zeros(d_t),
            "readout_w": _linear_init(rng, d_t, d),
            "readout_b": np.zeros(d),
        }
        for block in ("cross", "self"):
            entries[f"{block}_ln_gain"] = np.ones(d_t)
            entries[f"{block}_ln_bias"] = np.zeros(d_t)
            for proj in ("q", "k", "v", "o"):
                entries[f"{block}_{proj}_w"] = _linear_init(rng, d_t, d_t)
                entries[f"{block}_{proj}_b"] = np.zeros(d_t)
        return cls({
            name: Tensor(value.astype(dtype), requires_grad=True)
            for name, value in entries.items()
        })

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def names(self) -> list[str]:
        return list(self.tensors)

    def values(self) -> list[Tensor]:
        return list(self.tensors.values())

    def zero_grads(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def astype(self, dtype) -> "AFSParams":
        return AFSParams({
            name: Tensor(t.data.astype(dtype), requires_grad=True)
            for name, t in self.tensors.items()
        })

    def copy(self) -> "AFSParams":
        return AFSParams({
            name: Tensor(t.data.copy(), requires_grad=True)
            for name, t in self.tensors.items()
        })


@dataclass(frozen=True)
class AttentionScores:
    """Raw cross-attention rows of the query tokens over the sequence.

    Shape (n_h, s_q, s_r), or a leading batch axis when the forward pass
    was batched.  The CLS row is internal to the model and not included.
    Each row sums to 1 over valid sequence positions.
    """

    scores: np.ndarray
    query_mask: np.ndarray
    logits: np.ndarray


@dataclass(frozen=True)
class AFSOutput:
    """CLS readout plus the attention evidence that produced it."""

    z_cls: Tensor
    cross_attention: AttentionScores


def _split_heads(x: Tensor, n_h: int) -> Tensor:
    batch, length, width = x.shape
    return x.reshape(batch, length, n_h, width // n_h).swapaxes(1, 2)


def _merge_heads(x: Tensor) -> Tensor:
    batch, n_h, length, d_h = x.shape
    return x.swapaxes(1, 2).reshape(batch, length, n_h * d_h)


def forward(query_tokens: np.ndarray, query_mask: np.ndarray,
            seq: RelevanceSequence, params: AFSParams,
            config: AFSConfig,
            cross_logit_bias: np.ndarray | None = None) -> AFSOutput:
    """Run the two attention blocks and read out the CLS position.

    Accepts a single query (s_q, d_t) or a batch (B, s_q, d_t) with
    matching masks and stacked sequence features.  cross_logit_bias, when
    given, is added to every cross-attention row before the softmax.
    """
    tokens = np.asarray(query_tokens)
    batched = tokens.ndim == 3
    if not batched:
        tokens = tokens[None]
    dtype = params["cls"].data.dtype
    tokens = tokens.astype(dtype, copy=False)
    q_mask = np.atleast_2d(np.asarray(query_mask, dtype=bool))
    features = seq.features if seq.features.ndim == 3 else seq.features[None]
    seq_mask = np.atleast_2d(seq.mask)
    n_b, s_q = tokens.shape[0], tokens.shape[1]
    if tokens.shape[2] != config.d_t or features.shape[2] != config.d_t:
        raise ValueError(
            f"token width {tokens.shape[2]}/{features.shape[2]} does not "
            f"match d_t={config.d_t}")
    if features.shape[0] != n_b:
        if features.shape[0] == 1:
            features = np.broadcast_to(features, (n_b,) + features.shape[1:])
            seq_mask = np.broadcast_to(seq_mask, (n_b, seq_mask.shape[1]))
        else:
            raise ValueError("sequence batch does not match query batch")

    x = concat([
        params["cls"].reshape(1, 1, config.d_t).broadcast_to((n_b, 1, config.d_t)),
        Tensor(tokens),
    ], axis=1)

    kv = Tensor(features.astype(dtype, copy=False)) @ params["input_proj_w"] \
        + params["input_proj_b"]

    h = layer_norm(x, params["cross_ln_gain"], params["cross_ln_bias"])
    q = _split_heads(h @ params["cross_q_w"] + params["cross_q_b"], config.n_h)
    k = _split_heads(kv @ params["cross_k_w"] + params["cross_k_b"], config.n_h)
    v = _split_heads(kv @ params["cross_v_w"] + params["cross_v_b"], config.n_h)
    logits = (q @ k.swapaxes(-1, -2)) * (1.0 / float(np.sqrt(config.d_h)))
    if cross_logit_bias is not None:
        logits = logits + Tensor(np.asarray(cross_logit_bias, dtype=dtype))
    scores = softmax_rows(logits, seq_mask[:, None, None, :])
    attended = scores @ v
    x = x + (_merge_heads(attended) @ params["cross_o_w"] + params["cross_o_b"])

    h2 = layer_norm(x, params["self_ln_gain"], params["self_ln_bias"])
    q2 = _split_heads(h2 @ params["self_q_w"] + params["self_q_b"], config.n_h)
    k2 = _split_heads(h2 @ params["self_k_w"] + params["self_k_b"], config.n_h)
    v2 = _split_heads(h2 @ params["self_v_w"] + params["self_v_b"], config.n_h)
    self_mask = np.concatenate(
        [np.ones((n_b, 1), dtype=bool), q_mask], axis=1)[:, None, None, :]
    attended2, _ = attention(q2, k2, v2, self_mask)
    x = x + (_merge_heads(attended2) @ params["self_o_w"] + params["self_o_b"])

    z_cls = x[:, 0, :] @ params["readout_w"] + params["readout_b"]

    raw = scores.data[:, :, 1:, :]
    raw_logits = logits.data[:, :, 1:, :]
    if not batched:
        z_cls = z_cls.reshape(config.d)
        raw = raw[0]
        raw_logits = raw_logits[0]
        q_mask = q_mask[0]
    return AFSOutput(
        z_cls=z_cls,
        cross_attention=AttentionScores(scores=raw, query_mask=q_mask,
                                        logits=raw_logits),
    )
