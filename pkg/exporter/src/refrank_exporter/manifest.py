"""Input manifests: one row per item with image path and caption texts.

Two encodings of the same record list are accepted:

* JSON: a list of objects with keys ``item_id``, ``image``, ``captions``
  (list of strings), and ``synthetic_caption``.
* CSV: columns ``item_id``, ``image``, ``captions`` (texts joined with
  ``|``), and ``synthetic_caption``.

The synthetic caption is always supplied by the manifest author; this
package never generates text.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path


class ManifestError(Exception):
    """Raised for unreadable or internally inconsistent manifests."""


@dataclass(frozen=True)
class ManifestEntry:
    item_id: str
    image: Path
    captions: tuple[str, ...]
    synthetic_caption: str


def _build_entry(row: dict, ordinal: int, base: Path) -> ManifestEntry:
    missing = [key for key in ("item_id", "image", "captions",
                               "synthetic_caption") if key not in row]
    if missing:
        raise ManifestError(
            f"entry {ordinal}: missing field(s) {', '.join(missing)}")
    captions = row["captions"]
    if isinstance(captions, str):
        captions = captions.split("|")
    captions = tuple(c for c in (str(x).strip() for x in captions) if c)
    item_id = str(row["item_id"]).strip()
    if not item_id:
        raise ManifestError(f"entry {ordinal}: empty item_id")
    if not captions:
        raise ManifestError(f"entry {ordinal} ({item_id}): no captions")
    synthetic = str(row["synthetic_caption"]).strip()
    if not synthetic:
        raise ManifestError(
            f"entry {ordinal} ({item_id}): empty synthetic_caption")
    image = Path(str(row["image"]))
    if not image.is_absolute():
        image = base / image
    return ManifestEntry(item_id=item_id, image=image, captions=captions,
                         synthetic_caption=synthetic)


def read_manifest(path: str | Path) -> list[ManifestEntry]:
    """Parse a JSON or CSV manifest and check record-level invariants."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc

    if path.suffix.lower() == ".json":
        try:
            rows = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"{path.name}: invalid JSON: {exc}") from exc
        if not isinstance(rows, list):
            raise ManifestError(f"{path.name}: expected a list of objects")
    elif path.suffix.lower() == ".csv":
        rows = list(csv.DictReader(text.splitlines()))
    else:
        raise ManifestError(
            f"{path.name}: unsupported manifest format "
            "(expected .json or .csv)")

    entries = [_build_entry(row, i, path.parent)
               for i, row in enumerate(rows)]
    if not entries:
        raise ManifestError(f"{path.name}: manifest is empty")
    seen: set[str] = set()
    for entry in entries:
        if entry.item_id in seen:
            raise ManifestError(f"duplicate item_id {entry.item_id!r}")
        seen.add(entry.item_id)
    return entries
