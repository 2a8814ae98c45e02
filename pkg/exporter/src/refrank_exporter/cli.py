"""Command-line entry point: manifest in, store directory out."""

from __future__ import annotations

import logging
import sys

import click

from .backends import BackendLoadError, backend_names, get_backend
from .export import ExportError, export_store
from .manifest import ManifestError, read_manifest


@click.command()
@click.option("--manifest", "manifest_path", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="JSON or CSV manifest of items to embed.")
@click.option("--backend", "backend_name", default="hash", show_default=True,
              help="Embedding backend: " + ", ".join(backend_names()) + ".")
@click.option("--out", required=True, type=click.Path(file_okay=False),
              help="Store directory to write.")
@click.option("--split", default="export", show_default=True,
              help="Split label recorded in the store manifest.")
def main(manifest_path, backend_name, out, split):
    """Embed an image/caption manifest and write a retrieval store."""
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(message)s")
    try:
        entries = read_manifest(manifest_path)
        backend = get_backend(backend_name)
        report = export_store(entries, backend, out, split=split)
    except (ManifestError, BackendLoadError, ExportError) as exc:
        raise click.ClickException(str(exc)) from exc
    for item_id, reason in report.skipped:
        click.echo(f"skipped {item_id}: {reason}", err=True)
    if not report.ok:
        for violation in report.violations:
            click.echo(f"violation: {violation}", err=True)
        raise click.ClickException(
            f"exported store failed validation with "
            f"{len(report.violations)} violation(s)")
    click.echo(f"exported {report.n_items} items ({report.n_captions} "
               f"captions) with backend {backend.name} to {report.root}")


if __name__ == "__main__":
    main()
