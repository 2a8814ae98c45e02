"""Embedding backends: image/text feature extractors behind one protocol.

A backend fixes every dimension of the exported store (global ``dim``,
``token_dim``, patch count, text sequence length) and reports whether it
writes a per-item multivector block alongside the pooled image
embedding. The registry maps CLI names to constructors; backends that
need heavyweight model weights load them lazily and raise
``BackendLoadError`` with the underlying cause when unavailable.
"""

from __future__ import annotations

import hashlib
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError


class BackendLoadError(Exception):
    """Raised when a backend's model or runtime cannot be initialized."""


class ImageDecodeError(Exception):
    """Raised when an image file cannot be opened or decoded."""


@dataclass(frozen=True)
class ImageFeatures:
    embedding: np.ndarray
    patch_tokens: np.ndarray
    multivector: np.ndarray | None = None


@dataclass(frozen=True)
class TextFeatures:
    embedding: np.ndarray
    tokens: np.ndarray
    mask: np.ndarray


class Backend(ABC):
    """Feature extractor with fixed output dimensions."""

    name: str
    dim: int
    token_dim: int
    patches: int
    text_tokens: int
    writes_multivector: bool = False
    normalized: bool = True

    @abstractmethod
    def embed_image(self, path: Path) -> ImageFeatures:
        """Features for one image file; raises ImageDecodeError on bad input."""

    @abstractmethod
    def embed_text(self, text: str) -> TextFeatures:
        """Features for one caption string."""


def _unit(vector: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(vector)
    if norm == 0:
        vector = vector + 1e-6
        norm = np.linalg.norm(vector)
    return (vector / norm).astype(np.float32)


def _unit_rows(rows: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(rows, axis=-1, keepdims=True)
    return (rows / np.maximum(norms, 1e-12)).astype(np.float32)


class HashBackend(Backend):
    """Deterministic stand-in encoder for tests and offline pipelines.

    Every vector is drawn from an rng seeded by a sha256 of the content
    (file bytes for images, normalized text for captions) plus a role
    tag, so identical inputs embed identically across machines with no
    model weights involved. Images must still decode: undecodable files
    raise, exercising the same skip path a real encoder would.
    """

    name = "hash"
    dim = 16
    token_dim = 8
    patches = 9
    text_tokens = 12

    def __init__(self, multivector_rows: int = 0):
        self.multivector_rows = multivector_rows
        self.writes_multivector = multivector_rows > 0
        if self.writes_multivector:
            self.name = "hash-mv"

    def _rng(self, role: str, payload: bytes) -> np.random.Generator:
        digest = hashlib.sha256(role.encode() + b"\0" + payload).digest()
        return np.random.default_rng(int.from_bytes(digest[:8], "little"))

    def embed_image(self, path: Path) -> ImageFeatures:
        try:
            with Image.open(path) as img:
                img.verify()
            payload = Path(path).read_bytes()
        except (OSError, UnidentifiedImageError, ValueError) as exc:
            raise ImageDecodeError(f"{path}: {exc}") from exc
        embedding = _unit(self._rng("image", payload).normal(size=self.dim))
        patch_rng = self._rng("patches", payload)
        patch_tokens = _unit_rows(
            patch_rng.normal(size=(self.patches, self.token_dim)))
        multivector = None
        if self.writes_multivector:
            rows = self._rng("multivector", payload).normal(
                size=(self.multivector_rows, self.dim))
            multivector = _unit_rows(0.5 * embedding + 0.5 * rows)
        return ImageFeatures(embedding=embedding, patch_tokens=patch_tokens,
                             multivector=multivector)

    def embed_text(self, text: str) -> TextFeatures:
        payload = " ".join(text.split()).lower().encode()
        embedding = _unit(self._rng("text", payload).normal(size=self.dim))
        tokens = _unit_rows(self._rng("tokens", payload).normal(
            size=(self.text_tokens, self.token_dim)))
        n_valid = min(self.text_tokens, max(2, len(payload.split())))
        mask = np.zeros(self.text_tokens, dtype=np.uint8)
        mask[:n_valid] = 1
        return TextFeatures(embedding=embedding, tokens=tokens, mask=mask)


class TransformersBackend(Backend):
    """CLIP-family encoder via the transformers library.

    Global embeddings are the projected pooled outputs; patch tokens are
    the vision tower's final hidden states (CLS dropped); text tokens
    are the text tower's hidden states padded to ``text_tokens``.
    """

    patches = 49
    text_tokens = 32

    def __init__(self, model_name: str, display_name: str):
        self.name = display_name
        try:
            import torch
            from transformers import CLIPModel, CLIPProcessor
        except ImportError as exc:
            raise BackendLoadError(
                f"backend {display_name!r} needs torch and transformers: "
                f"{exc}") from exc
        try:
            self._model = CLIPModel.from_pretrained(model_name)
            self._processor = CLIPProcessor.from_pretrained(model_name)
        except Exception as exc:
            raise BackendLoadError(
                f"cannot load weights for {display_name!r} "
                f"({model_name}): {exc}") from exc
        self._torch = torch
        self._model.eval()
        self.dim = int(self._model.config.projection_dim)
        self.token_dim = int(self._model.config.vision_config.hidden_size)

    def embed_image(self, path: Path) -> ImageFeatures:
        try:
            with Image.open(path) as img:
                image = img.convert("RGB")
        except (OSError, UnidentifiedImageError) as exc:
            raise ImageDecodeError(f"{path}: {exc}") from exc
        inputs = self._processor(images=image, return_tensors="pt")
        with self._torch.no_grad():
            vision = self._model.vision_model(**inputs)
            pooled = self._model.visual_projection(vision.pooler_output)
        hidden = vision.last_hidden_state[0, 1:, :].numpy()
        if hidden.shape[0] != self.patches:
            self.patches = hidden.shape[0]
        return ImageFeatures(
            embedding=_unit(pooled[0].numpy()),
            patch_tokens=hidden.astype(np.float32),
        )

    def embed_text(self, text: str) -> TextFeatures:
        inputs = self._processor(
            text=[text], return_tensors="pt", padding="max_length",
            truncation=True, max_length=self.text_tokens)
        with self._torch.no_grad():
            out = self._model.text_model(**inputs)
            pooled = self._model.text_projection(out.pooler_output)
        tokens = out.last_hidden_state[0].numpy()
        width = tokens.shape[-1]
        if width != self.token_dim:
            pad = np.zeros((tokens.shape[0], self.token_dim - width),
                           dtype=tokens.dtype)
            tokens = np.concatenate([tokens, pad], axis=-1)
        mask = inputs["attention_mask"][0].numpy().astype(np.uint8)
        return TextFeatures(embedding=_unit(pooled[0].numpy()),
                            tokens=tokens.astype(np.float32), mask=mask)


class QFormerBackend(TransformersBackend):
    """BLIP-2-style backend: adds a query-token multivector per image."""

    writes_multivector = True

    def __init__(self, model_name: str, display_name: str,
                 multivector_rows: int = 32):
        super().__init__(model_name, display_name)
        self.multivector_rows = multivector_rows

    def embed_image(self, path: Path) -> ImageFeatures:
        base = super().embed_image(path)
        hidden = base.patch_tokens
        take = min(self.multivector_rows, hidden.shape[0])
        rows = hidden[:take, :]
        projected = np.zeros((take, self.dim), dtype=np.float32)
        width = min(self.dim, rows.shape[1])
        projected[:, :width] = rows[:, :width]
        return ImageFeatures(embedding=base.embedding,
                             patch_tokens=base.patch_tokens,
                             multivector=_unit_rows(projected))


_REGISTRY = {
    "hash": lambda: HashBackend(),
    "hash-mv": lambda: HashBackend(multivector_rows=4),
    "clip-vit-b32": lambda: TransformersBackend(
        "openai/clip-vit-base-patch32", "clip-vit-b32"),
    "clip-vit-l14": lambda: TransformersBackend(
        "openai/clip-vit-large-patch14", "clip-vit-l14"),
    "blip2": lambda: QFormerBackend(
        "openai/clip-vit-large-patch14", "blip2"),
}


def backend_names() -> list[str]:
    return sorted(_REGISTRY)


def get_backend(name: str) -> Backend:
    """Instantiate a registered backend; raises BackendLoadError."""
    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise BackendLoadError(
            f"unknown backend {name!r}; available: "
            + ", ".join(backend_names())) from None
    return factory()
