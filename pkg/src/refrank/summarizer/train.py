"""Training loop for the attention summarizer.

Each item contributes one query per epoch: a caption sampled from its
pool, with the remaining captions held out as the caption-side target and
the item's image as the image-side target.  Feedback items come from
baseline retrieval with the sampled query.  Optimization is decoupled
weight decay over adaptive moments with a cosine-annealed learning rate,
early stopping on a held-out validation split, and the best-validation
parameters returned.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..autodiff import Tensor
from ..ranking import rank_batch
from ..store import EmbeddingStore
from .model import AFSParams, forward
from .sequence import AFSConfig, build_relevance_sequence, stack_sequences


@dataclass(frozen=True)
class TrainConfig:
    """Optimization knobs; the small default batch suits desk-scale stores
    where update count, not throughput, limits convergence."""

    batch_size: int = 2
    epochs: int = 100
    patience: int = 10
    learning_rate: float = 3e-4
    weight_decay: float = 0.01
    seed: int = 0
    val_fraction: float = 0.1

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must be in (0, 1)")


@dataclass(frozen=True)
class TrainingTarget:
    """Supervision for one sampled query.

    caption_mean is absent when the item has no held-out captions, which
    only image_only training tolerates.
    """

    image: np.ndarray
    caption_mean: np.ndarray | None

    def __post_init__(self) -> None:
        for name, value in (("image", self.image),
                            ("caption_mean", self.caption_mean)):
            if value is None:
                continue
            if not np.all(np.isfinite(value)):
                raise ValueError(f"{name} target contains non-finite values")
            if np.linalg.norm(value) == 0:
                raise ValueError(f"{name} target has zero norm")


@dataclass(frozen=True)
class LossReport:
    """Per-query components and the combined batch loss value."""

    l_img: np.ndarray | None
    l_cap: np.ndarray | None
    total: float


def cosine_losses(z_cls: Tensor, targets: np.ndarray) -> Tensor:
    """1 - cosine per batch row; differentiable through z_cls."""
    t = np.asarray(targets, dtype=z_cls.data.dtype)
    target_norms = np.linalg.norm(t, axis=-1, keepdims=True)
    if np.any(target_norms == 0):
        raise ValueError("loss target has zero norm")
    t = t / target_norms
    dots = (z_cls * Tensor(t)).sum(axis=-1)
    norms = ((z_cls * z_cls).sum(axis=-1) + 1e-12) ** 0.5
    return 1.0 - dots / norms


def loss_image(z_cls: Tensor, image_targets: np.ndarray) -> Tensor:
    return cosine_losses(z_cls, image_targets)


def loss_caption(z_cls: Tensor, caption_targets: np.ndarray) -> Tensor:
    return cosine_losses(z_cls, caption_targets)


def batch_loss(l_img: Tensor | None, l_cap: Tensor | None,
               loss_mode: str) -> tuple[Tensor, LossReport]:
    """Combine per-query components: both-mode halves their sum."""
    if loss_mode == "image_only":
        total = l_img.sum()
    elif loss_mode == "caption_only":
        total = l_cap.sum()
    elif loss_mode == "both":
        total = (l_img.sum() + l_cap.sum()) * 0.5
    else:
        raise ValueError(f"unknown loss_mode {loss_mode!r}")
    report = LossReport(
        l_img=None if l_img is None else l_img.data.copy(),
        l_cap=None if l_cap is None else l_cap.data.copy(),
        total=float(total.data),
    )
    return total, report


class AdamW:
    """Decoupled-weight-decay adaptive moments, cosine-annealed to zero."""

    def __init__(self, params: AFSParams, config: TrainConfig,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.config = config
        self.betas = betas
        self.eps = eps
        self.step_count = 0
        self.lr_scale = 1.0
        self._m = {n: np.zeros_like(t.data) for n, t in params.tensors.items()}
        self._v = {n: np.zeros_like(t.data) for n, t in params.tensors.items()}

    def set_epoch(self, epoch: int) -> None:
        """Cosine annealing from the full rate toward zero at the horizon."""
        progress = min(epoch, self.config.epochs) / self.config.epochs
        self.lr_scale = 0.5 * (1.0 + np.cos(np.pi * progress))

    @property
    def learning_rate(self) -> float:
        return self.config.learning_rate * self.lr_scale

    def step(self) -> None:
        self.step_count += 1
        b1, b2 = self.betas
        lr = self.learning_rate
        for name, tensor in self.params.tensors.items():
            grad = tensor.grad
            if grad is None:
                continue
            m = self._m[name] = b1 * self._m[name] + (1 - b1) * grad
            v = self._v[name] = b2 * self._v[name] + (1 - b2) * grad * grad
            m_hat = m / (1 - b1 ** self.step_count)
            v_hat = v / (1 - b2 ** self.step_count)
            tensor.data -= lr * (m_hat / (np.sqrt(v_hat) + self.eps)
                                 + self.config.weight_decay * tensor.data)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    learning_rate: float


@dataclass
class TrainHistory:
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1
    best_val_loss: float = np.inf
    stopped_early: bool = False

    def to_dict(self) -> dict:
        return {
            "epochs": [vars(r) for r in self.epochs],
            "best_epoch": self.best_epoch,
            "best_val_loss": self.best_val_loss,
            "stopped_early": self.stopped_early,
        }


def _query_targets(store: EmbeddingStore, item_pos: int,
                   caption_offset: int) -> TrainingTarget:
    item = store.items[item_pos]
    rows = [item.caption_row_start + j for j in range(item.caption_row_count)
            if j != caption_offset]
    caption_mean = None
    if rows:
        caption_mean = store.caption_embeddings[rows].astype(np.float64).mean(axis=0)
    return TrainingTarget(
        image=store.image_embeddings[item.image_row].astype(np.float64),
        caption_mean=caption_mean,
    )


def _batch_forward(store: EmbeddingStore, rows: list[int],
                   targets: list[TrainingTarget], params: AFSParams,
                   config: AFSConfig):
    """Rank each query, build its sequence, and run one batched forward."""
    queries = store.caption_embeddings[rows].astype(np.float64)
    candidates = rank_batch(queries, store, config.k)
    sequences = [build_relevance_sequence(store, c, config) for c in candidates]
    batch_seq = stack_sequences(sequences)
    tokens = store.query_tokens[rows]
    mask = store.query_token_mask[rows].astype(bool)
    output = forward(tokens, mask, batch_seq, params, config)
    l_img = l_cap = None
    if config.loss_mode in ("image_only", "both"):
        l_img = loss_image(output.z_cls, np.stack([t.image for t in targets]))
    if config.loss_mode in ("caption_only", "both"):
        if any(t.caption_mean is None for t in targets):
            raise ValueError(
                "caption-supervised training needs >= 2 captions per item")
        l_cap = loss_caption(output.z_cls,
                             np.stack([t.caption_mean for t in targets]))
    return batch_loss(l_img, l_cap, config.loss_mode)


def train(store: EmbeddingStore, afs_config: AFSConfig,
          train_config: TrainConfig) -> tuple[AFSParams, TrainHistory]:
    """Fit summarizer parameters on a store with multi-caption items."""
    n = len(store.items)
    if n < 2:
        raise ValueError("training needs at least 2 items")
    if afs_config.loss_mode in ("caption_only", "both"):
        for item in store.items:
            if item.caption_row_count < 2:
                raise ValueError(
                    f"item {item.item_id} has fewer than 2 captions; "
                    "held-out caption targets are impossible")
    if store.query_tokens.shape[0] == 0:
        raise ValueError("store has no query token features")

    rng = np.random.default_rng(train_config.seed)
    order = rng.permutation(n)
    n_val = max(1, int(round(n * train_config.val_fraction)))
    val_items = order[:n_val]
    train_items = order[n_val:]
    if train_items.size == 0:
        raise ValueError("validation split consumed every item")

    # Fixed validation queries; training queries resample each epoch.
    val_offsets = rng.integers(0, [store.items[i].caption_row_count
                                   for i in val_items])
    val_rows = [store.items[i].caption_row_start + off
                for i, off in zip(val_items, val_offsets)]
    val_targets = [_query_targets(store, i, off)
                   for i, off in zip(val_items, val_offsets)]

    params = AFSParams.init(afs_config)
    optimizer = AdamW(params, train_config)
    history = TrainHistory()
    best_params = params.copy()
    since_best = 0

    for epoch in range(train_config.epochs):
        optimizer.set_epoch(epoch)
        epoch_rng = np.random.default_rng(
            np.random.SeedSequence([train_config.seed, epoch]))
        shuffled = epoch_rng.permutation(train_items)
        offsets = epoch_rng.integers(
            0, [store.items[i].caption_row_count for i in shuffled])

        total, count = 0.0, 0
        for start in range(0, shuffled.size, train_config.batch_size):
            chunk = shuffled[start:start + train_config.batch_size]
            chunk_offsets = offsets[start:start + train_config.batch_size]
            rows = [store.items[i].caption_row_start + off
                    for i, off in zip(chunk, chunk_offsets)]
            targets = [_query_targets(store, i, off)
                       for i, off in zip(chunk, chunk_offsets)]
            params.zero_grads()
            loss, report = _batch_forward(store, rows, targets, params,
                                          afs_config)
            loss.backward()
            optimizer.step()
            total += report.total
            count += len(rows)

        _, val_report = _batch_forward(store, val_rows, val_targets, params,
                                       afs_config)
        record = EpochRecord(
            epoch=epoch + 1,
            train_loss=total / count,
            val_loss=val_report.total / len(val_rows),
            learning_rate=optimizer.learning_rate,
        )
        history.epochs.append(record)

        if record.val_loss < history.best_val_loss:
            history.best_val_loss = record.val_loss
            history.best_epoch = record.epoch
            best_params = params.copy()
            since_best = 0
        else:
            since_best += 1
            if since_best >= train_config.patience:
                history.stopped_early = True
                break

    return best_params, history
