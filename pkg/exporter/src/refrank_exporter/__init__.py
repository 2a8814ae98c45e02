"""Manifest-to-store export pipeline with pluggable embedding backends."""

from .backends import (Backend, BackendLoadError, HashBackend,
                       ImageDecodeError, ImageFeatures, TextFeatures,
                       backend_names, get_backend)
from .export import ExportError, ExportReport, build_store, export_store
from .manifest import ManifestEntry, ManifestError, read_manifest

__all__ = [
    "Backend", "BackendLoadError", "ExportError", "ExportReport",
    "HashBackend", "ImageDecodeError", "ImageFeatures", "ManifestEntry",
    "ManifestError", "TextFeatures", "backend_names", "build_store",
    "export_store", "get_backend", "read_manifest",
]
