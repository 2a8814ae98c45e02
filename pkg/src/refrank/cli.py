"""Command-line front end: store tooling, benchmark runs, ablation grids,
summarizer training, saliency and 2-D map exports, and the HTTP service.

Run-producing commands write one directory per invocation holding
``config.json`` (the resolved flags), the command's outputs, and, for
``eval``, per-query ``runs.jsonl``.  Identical flags and seed reproduce
byte-identical output files.
"""

from __future__ import annotations

import csv
import itertools
import json
from pathlib import Path

import click
import numpy as np

from .pca import PCAProjector
from .ranking import rank
from .rocchio import (DEFAULT_ALPHA, DEFAULT_BETA, DEFAULT_GAMMA, DEFAULT_K,
                      DEFAULT_TAU, RocchioParams)
from .session import (ANCHOR_MODES, EXPLICIT_MODES, STRATEGIES, SessionConfig,
                      evaluate, run_turn, start_session)
from .store import StoreFormatError, load_store, validate_store, write_store
from .summarizer import AFSConfig, Summarizer, TrainConfig, saliency_items
from .synth import SynthConfig, generate
from .validation import resolve_seed

SEED_HELP = "Random seed; falls back to the REFRANK_SEED env var, then 0."
SUMMARIZER_STRATEGIES = ("afs", "afs_prf")
LOSS_FLAGS = {"img": "image_only", "cap": "caption_only", "both": "both"}

_SYNTH = SynthConfig()
_TRAIN = TrainConfig()
_AFS = AFSConfig()


def _write_json(path: Path, payload) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True, default=float)
    path.write_bytes((text + "\n").encode())


def _run_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _open_store(path: str):
    try:
        return load_store(path)
    except (StoreFormatError, FileNotFoundError, ValueError) as exc:
        raise click.ClickException(f"cannot load store at {path}: {exc}") from exc


def _load_summarizer(checkpoint: str | None, strategy: str | None = None):
    if checkpoint is None:
        if strategy in SUMMARIZER_STRATEGIES:
            raise click.UsageError(
                f"strategy {strategy!r} needs --checkpoint pointing at a "
                "trained summarizer")
        return None
    try:
        return Summarizer.load(checkpoint)
    except (StoreFormatError, FileNotFoundError, ValueError) as exc:
        raise click.ClickException(
            f"cannot load checkpoint at {checkpoint}: {exc}") from exc


def _parse_numbers(text: str, flag: str, cast):
    values = []
    for piece in text.split(","):
        piece = piece.strip()
        if not piece:
            continue
        try:
            values.append(cast(piece))
        except ValueError:
            raise click.UsageError(f"{flag}: cannot parse {piece!r}")
    return values


def _parse_weight_triples(text: str):
    triples = []
    for piece in text.split(","):
        piece = piece.strip()
        if not piece:
            continue
        parts = piece.split(":")
        if len(parts) != 3:
            raise click.UsageError(
                f"--weights: expected alpha:beta:gamma, got {piece!r}")
        try:
            triples.append(tuple(float(p) for p in parts))
        except ValueError:
            raise click.UsageError(f"--weights: cannot parse {piece!r}")
    return triples


def _seed_option(f):
    return click.option("--seed", type=int, default=None, help=SEED_HELP)(f)


def _rocchio_options(f):
    for option in (
        click.option("--k", default=DEFAULT_K, show_default=True,
                     help="Feedback set size: top-ranked items fed to refinement."),
        click.option("--tau", default=DEFAULT_TAU, show_default=True,
                     help="Softmax temperature over feedback similarities."),
        click.option("--gamma", default=DEFAULT_GAMMA, show_default=True,
                     help="Weight of the negative relevance vector."),
        click.option("--beta", default=DEFAULT_BETA, show_default=True,
                     help="Weight of the positive relevance vector."),
        click.option("--alpha", default=DEFAULT_ALPHA, show_default=True,
                     help="Weight of the anchor query embedding."),
    ):
        f = option(f)
    return f


@click.group()
def main():
    """Dense text-to-image retrieval with pluggable relevance feedback."""


@main.command()
@click.option("--out", required=True, type=click.Path(file_okay=False),
              help="Directory to write the generated store into.")
@click.option("--n-items", default=_SYNTH.n_items, show_default=True,
              help="Number of items in the generated world.")
@click.option("--d", default=_SYNTH.d, show_default=True,
              help="Global embedding width.")
@click.option("--d-t", default=_SYNTH.d_t, show_default=True,
              help="Token feature width.")
@click.option("--p", default=_SYNTH.p, show_default=True,
              help="Image patches per item.")
@click.option("--s", default=_SYNTH.s, show_default=True,
              help="Tokens per caption.")
@click.option("--captions-per-item", default=_SYNTH.captions_per_item,
              show_default=True, help="Stored captions per item.")
@click.option("--sigma-image", default=_SYNTH.sigma_image, show_default=True,
              help="Image embedding noise scale.")
@click.option("--sigma-caption", default=_SYNTH.sigma_caption,
              show_default=True, help="On-topic caption noise scale.")
@click.option("--offtopic-rate", default=_SYNTH.offtopic_rate,
              show_default=True,
              help="Fraction of captions that miss their item badly.")
@click.option("--offtopic-scale", default=_SYNTH.offtopic_scale,
              show_default=True,
              help="Noise multiplier applied to off-topic captions.")
@click.option("--g", default=_SYNTH.g, show_default=True,
              help="Magnitude of the image/text modality gap.")
@_seed_option
def synth(out, n_items, d, d_t, p, s, captions_per_item, sigma_image,
          sigma_caption, offtopic_rate, offtopic_scale, g, seed):
    """Generate a synthetic benchmark store and write it to disk."""
    try:
        config = SynthConfig(
            n_items=n_items, d=d, d_t=d_t, p=p, s=s,
            captions_per_item=captions_per_item, sigma_image=sigma_image,
            sigma_caption=sigma_caption, offtopic_rate=offtopic_rate,
            offtopic_scale=offtopic_scale, g=g, seed=resolve_seed(seed))
        store = generate(config)
    except ValueError as exc:
        raise click.ClickException(str(exc)) from exc
    root = write_store(store, out)
    click.echo(f"wrote {store.n_items} items "
               f"({store.caption_embeddings.shape[0]} captions) to {root}")


@main.command()
@click.option("--store", "store_path", required=True,
              type=click.Path(exists=True, file_okay=False),
              help="Store directory to load and check.")
def ingest(store_path):
    """Load a store directory and verify every format invariant."""
    store = _open_store(store_path)
    report = validate_store(store)
    if not report.ok:
        for message in report.violations:
            click.echo(f"violation: {message}", err=True)
        raise click.ClickException(
            f"{len(report.violations)} violation(s) in {store_path}")
    click.echo(f"ok: {store.n_items} items, dim {store.dim}, "
               f"token dim {store.token_dim}")


@main.command("eval")
@click.option("--store", "store_path", required=True,
              type=click.Path(exists=True, file_okay=False),
              help="Store directory to evaluate against.")
@click.option("--out", required=True, type=click.Path(file_okay=False),
              help="Run directory for config.json, metrics.json, runs.jsonl.")
@click.option("--strategy", default="none", show_default=True,
              type=click.Choice(STRATEGIES),
              help="Feedback strategy applied between turns.")
@click.option("--turns", default=1, show_default=True,
              type=click.IntRange(min=1), help="Retrieval turns per query.")
@_rocchio_options
@click.option("--anchor", default="previous", show_default=True,
              type=click.Choice(ANCHOR_MODES),
              help="Query refined on later turns: the previous turn's "
                   "embedding or the original one.")
@click.option("--explicit-mode", default="running", show_default=True,
              type=click.Choice(EXPLICIT_MODES),
              help="How explicit feedback folds new captions in.")
@click.option("--checkpoint", default=None,
              type=click.Path(exists=True, file_okay=False),
              help="Trained summarizer directory; required for afs/afs_prf.")
@_seed_option
def cmd_eval(store_path, out, strategy, turns, alpha, beta, gamma, tau, k,
             anchor, explicit_mode, checkpoint, seed):
    """Run every query through a session and write metrics and run logs."""
    store = _open_store(store_path)
    summarizer = _load_summarizer(checkpoint, strategy)
    seed = resolve_seed(seed)
    try:
        config = SessionConfig(
            strategy=strategy,
            params=RocchioParams(alpha=alpha, beta=beta, gamma=gamma,
                                 tau=tau, k=k),
            anchor=anchor, explicit_mode=explicit_mode)
        report, runs = evaluate(store, config, turns=turns,
                                summarizer=summarizer, seed=seed)
    except ValueError as exc:
        raise click.ClickException(str(exc)) from exc
    out_dir = _run_dir(out)
    _write_json(out_dir / "config.json", {
        "command": "eval", "store": store_path, "strategy": strategy,
        "turns": turns, "alpha": alpha, "beta": beta, "gamma": gamma,
        "tau": tau, "k": k, "anchor": anchor, "explicit_mode": explicit_mode,
        "checkpoint": checkpoint, "seed": seed,
    })
    _write_json(out_dir / "metrics.json", report.to_dict())
    with (out_dir / "runs.jsonl").open("w") as fh:
        for run in runs:
            fh.write(json.dumps(run, sort_keys=True) + "\n")
    click.echo(f"{strategy}: hits@1 {report.hits_at_1:.4f}  "
               f"hits@5 {report.hits_at_5:.4f}  mrr@5 {report.mrr_at_5:.4f}  "
               f"({report.n_queries} queries, {turns} turn(s))")


@main.command()
@click.option("--store", "store_path", required=True,
              type=click.Path(exists=True, file_okay=False),
              help="Store directory to evaluate against.")
@click.option("--out", required=True, type=click.Path(file_okay=False),
              help="Run directory for config.json, ablate.csv, ablate.json.")
@click.option("--strategy", default="prf_extended", show_default=True,
              type=click.Choice(STRATEGIES),
              help="Feedback strategy shared by every grid point.")
@click.option("--turns", default=2, show_default=True,
              type=click.IntRange(min=1), help="Retrieval turns per query.")
@click.option("--weights",
              default=f"{DEFAULT_ALPHA}:{DEFAULT_BETA}:{DEFAULT_GAMMA}",
              show_default=True,
              help="Comma-separated alpha:beta:gamma triples.")
@click.option("--taus", default=str(DEFAULT_TAU), show_default=True,
              help="Comma-separated softmax temperatures.")
@click.option("--ks", default=str(DEFAULT_K), show_default=True,
              help="Comma-separated feedback set sizes.")
@click.option("--loss-modes", default=None,
              help="Comma-separated summarizer loss modes (img, cap, both); "
                   "trains one model per mode, afs/afs_prf only.")
@click.option("--epochs", default=30, show_default=True,
              type=click.IntRange(min=1),
              help="Training epochs per loss mode (with --loss-modes).")
@click.option("--checkpoint", default=None,
              type=click.Path(exists=True, file_okay=False),
              help="Trained summarizer directory; required for afs/afs_prf "
                   "unless --loss-modes trains fresh models.")
@_seed_option
def ablate(store_path, out, strategy, turns, weights, taus, ks, loss_modes,
           epochs, checkpoint, seed):
    """Sweep mixing weights, temperature, set size, and loss mode."""
    store = _open_store(store_path)
    seed = resolve_seed(seed)
    weight_triples = _parse_weight_triples(weights)
    tau_values = _parse_numbers(taus, "--taus", float)
    k_values = _parse_numbers(ks, "--ks", int)

    modes: list[str | None] = [None]
    models: dict[str | None, Summarizer | None] = {}
    if loss_modes is not None:
        flags = [p.strip() for p in loss_modes.split(",") if p.strip()]
        unknown = [p for p in flags if p not in LOSS_FLAGS]
        if unknown:
            raise click.UsageError(
                f"--loss-modes: unknown mode(s) {unknown}; "
                f"choose from {sorted(LOSS_FLAGS)}")
        if strategy not in SUMMARIZER_STRATEGIES:
            raise click.UsageError(
                "--loss-modes only applies to afs/afs_prf strategies")
        if checkpoint is not None:
            raise click.UsageError(
                "--loss-modes trains fresh models; drop --checkpoint")
        modes = [LOSS_FLAGS[p] for p in flags]
    if not (weight_triples and tau_values and k_values and modes):
        raise click.UsageError("empty ablation grid")

    if loss_modes is not None:
        for mode in modes:
            afs_config = AFSConfig.from_store(store, loss_mode=mode, seed=seed)
            models[mode] = Summarizer.fit(
                store, afs_config, TrainConfig(epochs=epochs, seed=seed))
    else:
        models[None] = _load_summarizer(checkpoint, strategy)

    rows = []
    for mode, (alpha, beta, gamma), tau, k in itertools.product(
            modes, weight_triples, tau_values, k_values):
        try:
            config = SessionConfig(
                strategy=strategy,
                params=RocchioParams(alpha=alpha, beta=beta, gamma=gamma,
                                     tau=tau, k=k))
            report, _ = evaluate(store, config, turns=turns,
                                 summarizer=models.get(mode), seed=seed)
        except ValueError as exc:
            raise click.ClickException(str(exc)) from exc
        rows.append({
            "loss_mode": mode or "", "alpha": alpha, "beta": beta,
            "gamma": gamma, "tau": tau, "k": k, "metrics": report.to_dict(),
        })

    out_dir = _run_dir(out)
    _write_json(out_dir / "config.json", {
        "command": "ablate", "store": store_path, "strategy": strategy,
        "turns": turns, "weights": weights, "taus": taus, "ks": ks,
        "loss_modes": loss_modes, "epochs": epochs,
        "checkpoint": checkpoint, "seed": seed,
    })
    _write_json(out_dir / "ablate.json", {"strategy": strategy, "rows": rows})
    with (out_dir / "ablate.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["loss_mode", "alpha", "beta", "gamma", "tau", "k",
                         "hits@1", "hits@5", "mrr@5", "n_queries"])
        for row in rows:
            metrics = row["metrics"]
            writer.writerow([
                row["loss_mode"], row["alpha"], row["beta"], row["gamma"],
                row["tau"], row["k"], metrics["hits@1"], metrics["hits@5"],
                metrics["mrr@5"], metrics["n_queries"],
            ])
    click.echo(f"{len(rows)} grid point(s) written to {out_dir}")


@main.command("train-afs")
@click.option("--store", "store_path", required=True,
              type=click.Path(exists=True, file_okay=False),
              help="Store directory to train on.")
@click.option("--out", required=True, type=click.Path(file_okay=False),
              help="Run directory for the checkpoint and history.json.")
@click.option("--loss", default="both", show_default=True,
              type=click.Choice(tuple(LOSS_FLAGS)),
              help="Supervision: img aligns summaries to image embeddings, "
                   "cap to held-out caption means, both to each.")
@click.option("--epochs", default=_TRAIN.epochs, show_default=True,
              type=click.IntRange(min=1), help="Maximum training epochs.")
@click.option("--patience", default=_TRAIN.patience, show_default=True,
              type=click.IntRange(min=0),
              help="Early-stop patience in epochs without validation "
                   "improvement.")
@click.option("--lr", default=_TRAIN.learning_rate, show_default=True,
              help="Peak learning rate; cosine-annealed to 0.")
@click.option("--wd", default=_TRAIN.weight_decay, show_default=True,
              help="Decoupled weight decay.")
@click.option("--batch-size", default=_TRAIN.batch_size, show_default=True,
              type=click.IntRange(min=1), help="Queries per optimizer step.")
@click.option("--val-fraction", default=_TRAIN.val_fraction,
              show_default=True, help="Fraction of items held out for "
                                      "validation.")
@click.option("--n-heads", default=_AFS.n_h, show_default=True,
              type=click.IntRange(min=1), help="Attention heads.")
@_seed_option
def train_afs(store_path, out, loss, epochs, patience, lr, wd, batch_size,
              val_fraction, n_heads, seed):
    """Train the attention summarizer on a store and save a checkpoint."""
    store = _open_store(store_path)
    seed = resolve_seed(seed)
    try:
        afs_config = AFSConfig.from_store(
            store, loss_mode=LOSS_FLAGS[loss], n_h=n_heads, seed=seed)
        train_config = TrainConfig(
            batch_size=batch_size, epochs=epochs, patience=patience,
            learning_rate=lr, weight_decay=wd, seed=seed,
            val_fraction=val_fraction)
        model = Summarizer.fit(store, afs_config, train_config)
    except ValueError as exc:
        raise click.ClickException(str(exc)) from exc
    out_dir = _run_dir(out)
    model.save(out_dir / "checkpoint")
    _write_json(out_dir / "history.json", model.history.to_dict())
    _write_json(out_dir / "config.json", {
        "command": "train-afs", "store": store_path, "loss": loss,
        "epochs": epochs, "patience": patience, "lr": lr, "wd": wd,
        "batch_size": batch_size, "val_fraction": val_fraction,
        "n_heads": n_heads, "seed": seed,
    })
    history = model.history
    click.echo(f"best epoch {history.best_epoch} "
               f"(val loss {history.best_val_loss:.4f}); "
               f"checkpoint at {out_dir / 'checkpoint'}")


@main.command()
@click.option("--store", "store_path", required=True,
              type=click.Path(exists=True, file_okay=False),
              help="Store directory to rank against.")
@click.option("--checkpoint", required=True,
              type=click.Path(exists=True, file_okay=False),
              help="Trained summarizer directory.")
@click.option("--query-id", required=True,
              help="Caption id whose feedback attention to export.")
@click.option("--mode", default="afs", show_default=True,
              type=click.Choice(SUMMARIZER_STRATEGIES),
              help="afs attends to patches and caption tokens; afs_prf to "
                   "patches only.")
@click.option("--k", default=DEFAULT_K, show_default=True,
              type=click.IntRange(min=2), help="Feedback set size.")
@click.option("--out", required=True, type=click.Path(file_okay=False),
              help="Run directory for saliency.json.")
def saliency(store_path, checkpoint, query_id, mode, k, out):
    """Export per-patch and per-token attention salience for one query."""
    store = _open_store(store_path)
    model = _load_summarizer(checkpoint)
    try:
        row = store.caption_row(query_id)
    except KeyError as exc:
        raise click.ClickException(str(exc)) from exc
    include_captions = mode == "afs"
    query = np.asarray(store.caption_embeddings[row], dtype=np.float64)
    try:
        top = rank(query, store, k, query_id)
        output, seq = model.summarize(store, row, top.item_ids,
                                      include_captions)
    except ValueError as exc:
        raise click.ClickException(str(exc)) from exc
    items = saliency_items(output, seq, include_captions)
    out_dir = _run_dir(out)
    _write_json(out_dir / "config.json", {
        "command": "saliency", "store": store_path, "checkpoint": checkpoint,
        "query_id": query_id, "mode": mode, "k": k,
    })
    _write_json(out_dir / "saliency.json",
                {"query_id": query_id, "mode": mode, "k": k, "items": items})
    click.echo(f"saliency over {len(items)} items written to "
               f"{out_dir / 'saliency.json'}")


@main.command()
@click.option("--store", "store_path", required=True,
              type=click.Path(exists=True, file_okay=False),
              help="Store directory providing the embeddings.")
@click.option("--out", required=True, type=click.Path(file_okay=False),
              help="Run directory for pca.csv and pca.json.")
@click.option("--checkpoint", default=None,
              type=click.Path(exists=True, file_okay=False),
              help="Trained summarizer; adds refined-query rows of kind afs.")
@click.option("--limit", default=None, type=click.IntRange(min=1),
              help="Cap on rows taken per kind (default: all).")
@_seed_option
def pca(store_path, out, checkpoint, limit, seed):
    """Project pooled query, image, and summary embeddings to 2-D."""
    store = _open_store(store_path)
    seed = resolve_seed(seed)
    model = _load_summarizer(checkpoint)
    blocks = [
        ("query", np.asarray(store.caption_embeddings[:limit],
                             dtype=np.float64)),
        ("image", np.asarray(store.image_embeddings[:limit],
                             dtype=np.float64)),
    ]
    if model is not None:
        config = SessionConfig(strategy="afs", params=RocchioParams())
        refined = []
        for caption_id in store.caption_ids()[:limit]:
            state = start_session(store, caption_id, seed=seed)
            run_turn(state, config, store, model)
            refined.append(state.current_embedding)
        blocks.append(("afs", np.asarray(refined)))
    pooled = np.vstack([rows for _, rows in blocks])
    projector = PCAProjector(n_components=2, seed=seed)
    try:
        coords = projector.fit_transform(pooled)
    except ValueError as exc:
        raise click.ClickException(str(exc)) from exc
    kinds = [kind for kind, rows in blocks for _ in range(rows.shape[0])]

    out_dir = _run_dir(out)
    _write_json(out_dir / "config.json", {
        "command": "pca", "store": store_path, "checkpoint": checkpoint,
        "limit": limit, "seed": seed,
    })
    _write_json(out_dir / "pca.json", {
        "explained_variance": [float(v) for v in
                               projector.explained_variance_],
        "rows": [{"x": float(x), "y": float(y), "kind": kind}
                 for (x, y), kind in zip(coords, kinds)],
    })
    with (out_dir / "pca.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "kind"])
        for (x, y), kind in zip(coords, kinds):
            writer.writerow([float(x), float(y), kind])
    click.echo(f"projected {len(kinds)} embeddings to {out_dir / 'pca.csv'}")


@main.command()
@click.option("--store", "store_path", required=True,
              type=click.Path(exists=True, file_okay=False),
              help="Store directory to serve.")
@click.option("--checkpoint", default=None,
              type=click.Path(exists=True, file_okay=False),
              help="Trained summarizer; without it afs strategies are "
                   "rejected per request.")
@click.option("--host", default="127.0.0.1", show_default=True,
              help="Bind address.")
@click.option("--port", default=8000, show_default=True, help="Bind port.")
@click.option("--session-log", default=None, type=click.Path(dir_okay=False),
              help="File where session history is flushed on shutdown.")
@_seed_option
def serve(store_path, checkpoint, host, port, session_log, seed):
    """Serve the interactive feedback API over HTTP."""
    import uvicorn

    from .service import create_app

    store = _open_store(store_path)
    model = _load_summarizer(checkpoint)
    app = create_app(store, summarizer=model, session_log=session_log,
                     seed=resolve_seed(seed))
    try:
        uvicorn.run(app, host=host, port=port, log_level="warning")
    except OSError as exc:
        raise click.ClickException(f"cannot bind {host}:{port}: {exc}") from exc


if __name__ == "__main__":
    main()
