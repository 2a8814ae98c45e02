"""Shared fixtures: tiny hand-buildable stores used across test modules."""

import numpy as np
import pytest

from refrank.store import Caption, EmbeddingStore, ItemRecord


def build_store(n_items=3, dim=4, token_dim=3, patches=2, caption_tokens=2,
                captions_per_item=2, seed=0, multivector_rows=0):
    """Construct a small in-memory store with deterministic random tensors."""
    rng = np.random.default_rng(seed)
    n_captions = n_items * captions_per_item

    def mat(rows, cols):
        m = rng.normal(size=(rows, cols)).astype(np.float32)
        return m / np.linalg.norm(m, axis=-1, keepdims=True)

    items = []
    for i in range(n_items):
        items.append(ItemRecord(
            item_id=f"item{i:03d}",
            image_ref=f"images/{i:03d}.jpg",
            captions=tuple(
                Caption(f"cap{i:03d}_{j}", f"caption {j} of item {i}")
                for j in range(captions_per_item)
            ),
            synthetic_caption=f"synthetic caption for item {i}",
            image_row=i,
            caption_row_start=i * captions_per_item,
            caption_row_count=captions_per_item,
            synthetic_row=i,
        ))

    multivector = None
    if multivector_rows:
        multivector = rng.normal(size=(n_items, multivector_rows, dim)).astype(np.float32)
        multivector /= np.linalg.norm(multivector, axis=-1, keepdims=True)

    return EmbeddingStore(
        backbone="synthetic",
        split="test",
        dim=dim,
        token_dim=token_dim,
        image_embeddings=mat(n_items, dim),
        caption_embeddings=mat(n_captions, dim),
        synthetic_caption_embeddings=mat(n_items, dim),
        image_tokens=rng.normal(size=(n_items, patches, token_dim)).astype(np.float32),
        image_token_mask=np.ones((n_items, patches), dtype=np.uint8),
        synthetic_caption_tokens=rng.normal(
            size=(n_items, caption_tokens, token_dim)).astype(np.float32),
        synthetic_caption_token_mask=np.ones((n_items, caption_tokens), dtype=np.uint8),
        query_tokens=rng.normal(size=(n_captions, caption_tokens, token_dim)).astype(np.float32),
        query_token_mask=np.ones((n_captions, caption_tokens), dtype=np.uint8),
        items=tuple(items),
        image_multivector=multivector,
        normalized={"image_embeddings": True, "caption_embeddings": True,
                    "synthetic_caption_embeddings": True},
    )


@pytest.fixture
def tiny_store():
    return build_store()
