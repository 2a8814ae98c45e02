"""On-disk and in-memory data model for embedding stores.

A store directory holds a ``manifest.json`` plus binary tensor files:

* ``*.embt`` — little-endian binary tensors: 4-byte magic ``EMBT``,
  u32 version (=1), u32 dtype code (0 = float32, 1 = uint8), u32 rank,
  ``rank`` x u64 dims, then the raw row-major payload.
* ``*.mask`` — u8 validity tensors for padded token features, same header.

The manifest lists tensor files with their declared shapes and roles, plus
one record per item binding it to rows of each tensor.  Stores are immutable
after load and safe for concurrent readers.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"EMBT"
FORMAT_VERSION = 1

_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("u1")}
_DTYPE_NAMES = {"float32": 0, "uint8": 1}


class StoreFormatError(Exception):
    """Raised when a store directory or tensor file violates the format."""


def write_tensor(path: str | Path, array: np.ndarray) -> None:
    """Write ``array`` as an EMBT tensor file (float32 or uint8)."""
    path = Path(path)
    if array.dtype == np.float32:
        code = 0
    elif array.dtype == np.uint8:
        code = 1
    else:
        raise StoreFormatError(f"unsupported dtype {array.dtype} for {path.name}")
    header = MAGIC + struct.pack("<III", FORMAT_VERSION, code, array.ndim)
    header += struct.pack(f"<{array.ndim}Q", *array.shape)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(array).tobytes())


def read_tensor(path: str | Path) -> np.ndarray:
    """Read an EMBT tensor file, checking magic, version, and payload size."""
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise StoreFormatError(f"{path.name}: bad magic {magic!r}, expected {MAGIC!r}")
        version, code, rank = struct.unpack("<III", fh.read(12))
        if version != FORMAT_VERSION:
            raise StoreFormatError(
                f"{path.name}: unsupported version {version}, expected {FORMAT_VERSION}"
            )
        if code not in _DTYPE_CODES:
            raise StoreFormatError(f"{path.name}: unknown dtype code {code}")
        dims = struct.unpack(f"<{rank}Q", fh.read(8 * rank))
        payload = fh.read()
    dtype = _DTYPE_CODES[code]
    expected = int(np.prod(dims)) * dtype.itemsize if dims else dtype.itemsize
    if len(payload) != expected:
        raise StoreFormatError(
            f"{path.name}: payload has {len(payload)} bytes, header implies {expected}"
        )
    return np.frombuffer(payload, dtype=dtype).reshape(dims).copy()


def _check_finite(array: np.ndarray, filename: str) -> None:
    if array.dtype.kind != "f":
        return
    bad = ~np.isfinite(array)
    if bad.any():
        offset = int(np.flatnonzero(bad.reshape(-1))[0])
        row = int(np.unravel_index(offset, array.shape)[0])
        raise StoreFormatError(
            f"{filename}: non-finite value at flat offset {offset} (row {row})"
        )


@dataclass(frozen=True)
class Caption:
    caption_id: str
    text: str


@dataclass(frozen=True)
class ItemRecord:
    """One retrievable item and its row bindings into the store tensors."""

    item_id: str
    image_ref: str
    captions: tuple[Caption, ...]
    synthetic_caption: str
    image_row: int
    caption_row_start: int
    caption_row_count: int
    synthetic_row: int


@dataclass
class EmbeddingStore:
    """All embeddings, token features, and item metadata for one dataset split.

    Global matrices share dimensionality ``dim``; token tensors share
    ``token_dim``.  ``image_multivector``, when present, replaces
    ``image_embeddings`` for scoring (rank-3, items x k x dim).
    """

    backbone: str
    split: str
    dim: int
    token_dim: int
    image_embeddings: np.ndarray
    caption_embeddings: np.ndarray
    synthetic_caption_embeddings: np.ndarray
    image_tokens: np.ndarray
    image_token_mask: np.ndarray
    synthetic_caption_tokens: np.ndarray
    synthetic_caption_token_mask: np.ndarray
    query_tokens: np.ndarray
    query_token_mask: np.ndarray
    items: tuple[ItemRecord, ...]
    image_multivector: np.ndarray | None = None
    normalized: dict[str, bool] = field(default_factory=dict)

    _item_index: dict[str, int] = field(init=False, repr=False, default_factory=dict)
    _caption_index: dict[str, tuple[int, int]] = field(init=False, repr=False, default_factory=dict)

    def __post_init__(self) -> None:
        for pos, item in enumerate(self.items):
            self._item_index[item.item_id] = pos
            for j, cap in enumerate(item.captions):
                self._caption_index[cap.caption_id] = (pos, item.caption_row_start + j)

    @property
    def n_items(self) -> int:
        return len(self.items)

    @property
    def uses_multivector(self) -> bool:
        return self.image_multivector is not None

    def item(self, item_id: str) -> ItemRecord:
        try:
            return self.items[self._item_index[item_id]]
        except KeyError:
            raise KeyError(f"unknown item_id {item_id!r}") from None

    def has_item(self, item_id: str) -> bool:
        return item_id in self._item_index

    def caption_row(self, caption_id: str) -> int:
        try:
            return self._caption_index[caption_id][1]
        except KeyError:
            raise KeyError(f"unknown caption_id {caption_id!r}") from None

    def caption_owner(self, caption_id: str) -> ItemRecord:
        try:
            return self.items[self._caption_index[caption_id][0]]
        except KeyError:
            raise KeyError(f"unknown caption_id {caption_id!r}") from None

    def caption_ids(self) -> list[str]:
        return [cap.caption_id for item in self.items for cap in item.captions]

    def item_feedback_embedding(self, item_pos: int, query: np.ndarray | None = None) -> np.ndarray:
        """Global image-side embedding used as feedback vector z_i.

        With a multivector store the row most similar to ``query`` stands in
        for the item; otherwise the single image embedding row is returned.
        """
        item = self.items[item_pos]
        if self.image_multivector is None:
            return self.image_embeddings[item.image_row]
        rows = self.image_multivector[item.image_row]
        if query is None:
            return rows[0]
        sims = rows @ query / (np.linalg.norm(rows, axis=1) * np.linalg.norm(query) + 1e-12)
        return rows[int(np.argmax(sims))]


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, message: str) -> None:
        self.violations.append(message)


def validate_store(store: EmbeddingStore) -> ValidationReport:
    """Check every store invariant; returns violations without mutating."""
    report = ValidationReport()
    n = store.n_items

    globals_ = {
        "image_embeddings": store.image_embeddings,
        "caption_embeddings": store.caption_embeddings,
        "synthetic_caption_embeddings": store.synthetic_caption_embeddings,
    }
    for name, mat in globals_.items():
        if mat.ndim != 2:
            report.add(f"{name}: expected rank 2, got rank {mat.ndim}")
            continue
        if mat.shape[1] != store.dim:
            report.add(f"{name}: dim {mat.shape[1]} != store dim {store.dim}")
        if not np.all(np.isfinite(mat)):
            report.add(f"{name}: non-finite values")
        elif mat.shape[0] and np.any(np.linalg.norm(mat, axis=1) == 0.0):
            row = int(np.flatnonzero(np.linalg.norm(mat, axis=1) == 0.0)[0])
            report.add(f"{name}: zero-norm row {row}")

    if store.image_multivector is not None:
        mv = store.image_multivector
        if mv.ndim != 3:
            report.add(f"image_multivector: expected rank 3, got rank {mv.ndim}")
        else:
            if mv.shape[2] != store.dim:
                report.add(f"image_multivector: dim {mv.shape[2]} != store dim {store.dim}")
            if mv.shape[0] != store.image_embeddings.shape[0]:
                report.add("image_multivector: item count differs from image_embeddings")
            if not np.all(np.isfinite(mv)):
                report.add("image_multivector: non-finite values")

    tokens = {
        "image_tokens": (store.image_tokens, store.image_token_mask),
        "synthetic_caption_tokens": (store.synthetic_caption_tokens, store.synthetic_caption_token_mask),
        "query_tokens": (store.query_tokens, store.query_token_mask),
    }
    for name, (values, mask) in tokens.items():
        if values.ndim != 3:
            report.add(f"{name}: expected rank 3, got rank {values.ndim}")
            continue
        if values.shape[2] != store.token_dim:
            report.add(f"{name}: token dim {values.shape[2]} != store token dim {store.token_dim}")
        if mask.shape != values.shape[:2]:
            report.add(f"{name}: mask shape {mask.shape} != {values.shape[:2]}")
        if not np.all(np.isfinite(values)):
            report.add(f"{name}: non-finite values")

    n_captions = store.caption_embeddings.shape[0]
    seen_ids: set[str] = set()
    for item in store.items:
        if item.item_id in seen_ids:
            report.add(f"item {item.item_id}: duplicate item_id")
        seen_ids.add(item.item_id)
        if item.caption_row_count < 1 or len(item.captions) < 1:
            report.add(f"item {item.item_id}: caption count must be >= 1")
        if len(item.captions) != item.caption_row_count:
            report.add(f"item {item.item_id}: caption list length != caption_row_count")
        if not (0 <= item.image_row < store.image_embeddings.shape[0]):
            report.add(f"item {item.item_id}: image_row {item.image_row} out of range")
        if not (0 <= item.synthetic_row < store.synthetic_caption_embeddings.shape[0]):
            report.add(f"item {item.item_id}: synthetic_row {item.synthetic_row} out of range")
        end = item.caption_row_start + item.caption_row_count
        if item.caption_row_start < 0 or end > n_captions:
            report.add(
                f"item {item.item_id}: caption rows [{item.caption_row_start}, {end}) out of range"
            )
        if store.query_tokens.shape[0] and end > store.query_tokens.shape[0]:
            report.add(f"item {item.item_id}: caption rows exceed query_tokens entries")

    return report


def _tensor_entry(name: str, array: np.ndarray, normalized: bool | None = None,
                  mask_file: str | None = None) -> dict:
    dtype_name = "float32" if array.dtype == np.float32 else "uint8"
    entry: dict = {"file": f"{name}.embt", "shape": list(array.shape), "dtype": dtype_name}
    if mask_file is not None:
        entry["mask_file"] = mask_file
    if normalized is not None:
        entry["normalized"] = normalized
    return entry


def write_store(store: EmbeddingStore, root: str | Path) -> Path:
    """Write a store directory (manifest + EMBT tensors); returns the root."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)

    tensors: dict[str, np.ndarray] = {
        "image_embeddings": store.image_embeddings,
        "caption_embeddings": store.caption_embeddings,
        "synthetic_caption_embeddings": store.synthetic_caption_embeddings,
        "image_tokens": store.image_tokens,
        "synthetic_caption_tokens": store.synthetic_caption_tokens,
        "query_tokens": store.query_tokens,
    }
    masks: dict[str, np.ndarray] = {
        "image_tokens": store.image_token_mask,
        "synthetic_caption_tokens": store.synthetic_caption_token_mask,
        "query_tokens": store.query_token_mask,
    }
    if store.image_multivector is not None:
        tensors["image_multivector"] = store.image_multivector

    manifest_tensors = {}
    for name, array in tensors.items():
        write_tensor(root / f"{name}.embt", np.asarray(array, dtype=np.float32))
        mask_file = None
        if name in masks:
            mask_file = f"{name}.mask"
            write_tensor(root / mask_file, np.asarray(masks[name], dtype=np.uint8))
        manifest_tensors[name] = _tensor_entry(
            name, np.asarray(array, dtype=np.float32),
            normalized=store.normalized.get(name), mask_file=mask_file,
        )

    manifest = {
        "format_version": FORMAT_VERSION,
        "backbone": store.backbone,
        "split": store.split,
        "dim": store.dim,
        "token_dim": store.token_dim,
        "tensors": manifest_tensors,
        "items": [
            {
                "item_id": it.item_id,
                "image_ref": it.image_ref,
                "captions": [{"caption_id": c.caption_id, "text": c.text} for c in it.captions],
                "synthetic_caption": it.synthetic_caption,
                "image_row": it.image_row,
                "caption_row_start": it.caption_row_start,
                "caption_row_count": it.caption_row_count,
                "synthetic_row": it.synthetic_row,
            }
            for it in store.items
        ],
    }
    with open(root / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return root


def _load_declared(root: Path, entry: dict, role: str) -> np.ndarray:
    path = root / entry["file"]
    if not path.exists():
        raise StoreFormatError(f"manifest references missing file {entry['file']}")
    array = read_tensor(path)
    declared = tuple(entry["shape"])
    if array.shape != declared:
        raise StoreFormatError(
            f"{role}: manifest declares shape {list(declared)} but "
            f"{entry['file']} header says {list(array.shape)}"
        )
    _check_finite(array, entry["file"])
    return array


def load_store(root: str | Path) -> EmbeddingStore:
    """Load and fully validate a store directory.

    Read-only: tensors are loaded into fresh arrays.  Raises
    ``StoreFormatError`` on any format or invariant violation.
    """
    root = Path(root)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise StoreFormatError(f"no manifest.json in {root}")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    if manifest.get("format_version") != FORMAT_VERSION:
        raise StoreFormatError(
            f"manifest format_version {manifest.get('format_version')} "
            f"!= supported {FORMAT_VERSION}"
        )

    entries = manifest["tensors"]
    required = [
        "image_embeddings", "caption_embeddings", "synthetic_caption_embeddings",
        "image_tokens", "synthetic_caption_tokens", "query_tokens",
    ]
    for role in required:
        if role not in entries:
            raise StoreFormatError(f"manifest missing tensor role {role!r}")

    dim = int(manifest["dim"])
    for role in ("image_embeddings", "caption_embeddings", "synthetic_caption_embeddings"):
        declared = entries[role]["shape"]
        if declared[-1] != dim:
            raise StoreFormatError(
                f"{role}: manifest dim {dim} but tensor header declares {declared[-1]}"
            )

    arrays: dict[str, np.ndarray] = {}
    mask_arrays: dict[str, np.ndarray] = {}
    for role, entry in entries.items():
        arrays[role] = _load_declared(root, entry, role)
        if entry.get("mask_file"):
            mask_path = root / entry["mask_file"]
            if not mask_path.exists():
                raise StoreFormatError(f"manifest references missing file {entry['mask_file']}")
            mask_arrays[role] = read_tensor(mask_path)

    items = []
    for raw in manifest["items"]:
        items.append(ItemRecord(
            item_id=raw["item_id"],
            image_ref=raw["image_ref"],
            captions=tuple(Caption(c["caption_id"], c["text"]) for c in raw["captions"]),
            synthetic_caption=raw["synthetic_caption"],
            image_row=int(raw["image_row"]),
            caption_row_start=int(raw["caption_row_start"]),
            caption_row_count=int(raw["caption_row_count"]),
            synthetic_row=int(raw["synthetic_row"]),
        ))

    normalized = {
        role: bool(entry["normalized"])
        for role, entry in entries.items() if "normalized" in entry
    }
    store = EmbeddingStore(
        backbone=manifest.get("backbone", "unknown"),
        split=manifest.get("split", "unknown"),
        dim=dim,
        token_dim=int(manifest["token_dim"]),
        image_embeddings=arrays["image_embeddings"],
        caption_embeddings=arrays["caption_embeddings"],
        synthetic_caption_embeddings=arrays["synthetic_caption_embeddings"],
        image_tokens=arrays["image_tokens"],
        image_token_mask=mask_arrays.get(
            "image_tokens", np.ones(arrays["image_tokens"].shape[:2], dtype=np.uint8)),
        synthetic_caption_tokens=arrays["synthetic_caption_tokens"],
        synthetic_caption_token_mask=mask_arrays.get(
            "synthetic_caption_tokens",
            np.ones(arrays["synthetic_caption_tokens"].shape[:2], dtype=np.uint8)),
        query_tokens=arrays["query_tokens"],
        query_token_mask=mask_arrays.get(
            "query_tokens", np.ones(arrays["query_tokens"].shape[:2], dtype=np.uint8)),
        items=tuple(items),
        image_multivector=arrays.get("image_multivector"),
        normalized=normalized,
    )

    report = validate_store(store)
    if not report.ok:
        raise StoreFormatError(
            "store failed validation: " + "; ".join(report.violations[:5])
        )
    return store
