"""Turn a parsed manifest plus a backend into a store directory."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from refrank.store import (Caption, EmbeddingStore, ItemRecord,
                           validate_store, write_store)

from .backends import Backend, ImageDecodeError
from .manifest import ManifestEntry

logger = logging.getLogger(__name__)


class ExportError(Exception):
    """Raised when no usable items remain or the output is invalid."""


@dataclass
class ExportReport:
    root: Path
    n_items: int
    n_captions: int
    skipped: list[tuple[str, str]] = field(default_factory=list)
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def build_store(entries: list[ManifestEntry], backend: Backend,
                split: str = "export") -> tuple[EmbeddingStore,
                                                list[tuple[str, str]]]:
    """Embed every manifest entry; undecodable images are skipped."""
    image_rows, caption_rows, synth_rows = [], [], []
    image_tokens, query_tokens, query_masks = [], [], []
    synth_tokens, synth_masks = [], []
    multivectors = []
    items: list[ItemRecord] = []
    skipped: list[tuple[str, str]] = []

    for entry in entries:
        try:
            image = backend.embed_image(entry.image)
        except ImageDecodeError as exc:
            logger.warning("skipping %s: %s", entry.item_id, exc)
            skipped.append((entry.item_id, str(exc)))
            continue
        caption_start = len(caption_rows)
        captions = []
        for j, text in enumerate(entry.captions):
            features = backend.embed_text(text)
            caption_rows.append(features.embedding)
            query_tokens.append(features.tokens)
            query_masks.append(features.mask)
            captions.append(Caption(
                caption_id=f"{entry.item_id}_c{j}", text=text))
        synthetic = backend.embed_text(entry.synthetic_caption)
        items.append(ItemRecord(
            item_id=entry.item_id,
            image_ref=str(entry.image),
            captions=tuple(captions),
            synthetic_caption=entry.synthetic_caption,
            image_row=len(image_rows),
            caption_row_start=caption_start,
            caption_row_count=len(captions),
            synthetic_row=len(synth_rows),
        ))
        image_rows.append(image.embedding)
        image_tokens.append(image.patch_tokens)
        synth_rows.append(synthetic.embedding)
        synth_tokens.append(synthetic.tokens)
        synth_masks.append(synthetic.mask)
        if backend.writes_multivector:
            multivectors.append(image.multivector)

    if not items:
        raise ExportError("no items survived embedding; nothing to export")

    def stack(rows):
        return np.asarray(np.stack(rows), dtype=np.float32)

    def stack_mask(rows):
        return np.asarray(np.stack(rows), dtype=np.uint8)

    normalized = {name: True for name in (
        "image_embeddings", "caption_embeddings",
        "synthetic_caption_embeddings")} if backend.normalized else {}
    store = EmbeddingStore(
        backbone=backend.name,
        split=split,
        dim=backend.dim,
        token_dim=backend.token_dim,
        image_embeddings=stack(image_rows),
        caption_embeddings=stack(caption_rows),
        synthetic_caption_embeddings=stack(synth_rows),
        image_tokens=stack(image_tokens),
        image_token_mask=np.ones(
            (len(items), backend.patches), dtype=np.uint8),
        synthetic_caption_tokens=stack(synth_tokens),
        synthetic_caption_token_mask=stack_mask(synth_masks),
        query_tokens=stack(query_tokens),
        query_token_mask=stack_mask(query_masks),
        items=tuple(items),
        image_multivector=stack(multivectors) if multivectors else None,
        normalized=normalized,
    )
    return store, skipped


def export_store(entries: list[ManifestEntry], backend: Backend,
                 out_dir: str | Path, split: str = "export") -> ExportReport:
    """Embed, write, and validate one store directory."""
    store, skipped = build_store(entries, backend, split=split)
    root = write_store(store, out_dir)
    report = validate_store(store)
    return ExportReport(
        root=root,
        n_items=store.n_items,
        n_captions=store.caption_embeddings.shape[0],
        skipped=skipped,
        violations=list(report.violations),
    )
