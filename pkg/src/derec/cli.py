"""Stage-oriented command line: ingest, stats, embed, index, retrieve,
train, predict, eval, bench and run.

Exit codes: 0 success, 1 validation problem, 2 stage failure, 3 provider
unreachable.
"""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click

from . import corpus as corpus_mod
from .adapters import convert_corpus
from .config import PipelineConfig, load_config, validate_config
from .embed import embed_corpus, make_provider
from .errors import DerecError, ValidationError
from .evaluate import (
    bench_scaling,
    bench_to_json,
    render_bench,
    render_report,
    render_runtime,
    score,
)
from .index import build_index, load_index, save_index
from .pipeline import (
    head_training_config,
    predict_claims,
    run_pipeline,
    train_model,
)
from .retrieve import load_evidence, retrieve_all, save_evidence
from .store import EmbeddingStore
from .verify import load_model, load_predictions, save_model, save_predictions


def infer_scheme(path) -> str:
    """Smallest scheme covering every label in a canonical dataset file."""
    labels: set[str] = set()
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                try:
                    label = json.loads(line).get("label")
                except json.JSONDecodeError:
                    continue
                if isinstance(label, str):
                    labels.add(label)
    for name in ("3", "6"):
        if labels <= set(corpus_mod.SCHEMES[name].labels):
            return name
    raise ValidationError(f"dataset {path} has labels outside both schemes: "
                          f"{sorted(labels)}")


@click.group()
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="Pipeline config file (used by `run`).")
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@click.option("--out", "out_dir", type=click.Path(), default=None,
              help="Override the config output directory.")
@click.option("--force", is_flag=True, help="Recompute stages even when fresh.")
@click.option("--log-level", default="warning",
              type=click.Choice(["debug", "info", "warning", "error"]))
@click.pass_context
def cli(ctx, config_path, seed, out_dir, force, log_level):
    """Evidence-grounded claim verification pipeline."""
    logging.basicConfig(level=getattr(logging, log_level.upper()),
                        format="%(levelname)s %(name)s: %(message)s")
    ctx.obj = {
        "config_path": config_path,
        "seed": seed,
        "out_dir": out_dir,
        "force": force,
    }


@cli.command()
@click.option("--input", "input_path", required=True, type=click.Path(exists=True))
@click.option("--scheme", required=True, type=click.Choice(["3", "6"]))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--from-published", is_flag=True,
              help="Treat the input as a published-layout corpus directory "
                   "and convert it first.")
def ingest(input_path, scheme, out_path, from_published):
    """Validate a corpus and write it in the canonical format."""
    if from_published:
        summary = convert_corpus(input_path, scheme, out_path)
        click.echo(f"converted {summary.n_claims} claims "
                   f"({summary.n_skipped} skipped)")
        input_path = out_path
    dataset = corpus_mod.ingest(input_path, scheme)
    corpus_mod.save_dataset(dataset, out_path)
    flagged = len(dataset.empty_evidence_claim_ids)
    click.echo(f"{len(dataset)} claims -> {out_path}"
               + (f" ({flagged} with no evidence sentences)" if flagged else ""))


@cli.command()
@click.option("--dataset", "dataset_path", required=True,
              type=click.Path(exists=True))
@click.option("--split", type=click.Choice(corpus_mod.SPLITS), default=None)
def stats(dataset_path, split):
    """Print split statistics as a summary table."""
    dataset = corpus_mod.ingest(dataset_path, infer_scheme(dataset_path))
    splits = (split,) if split else corpus_mod.SPLITS
    click.echo(corpus_mod.render_stats_table(dataset, splits))
    counts = corpus_mod.label_distribution(dataset)
    click.echo("\nLabel distribution: "
               + ", ".join(f"{label}={count}" for label, count in counts.items()))


def _provider_options(fn):
    fn = click.option("--provider", default="hash",
                      help="'hash' or the URL of an embedding service.")(fn)
    fn = click.option("--dim", type=int, default=64)(fn)
    fn = click.option("--seed", type=int, default=0)(fn)
    fn = click.option("--model", default="default")(fn)
    fn = click.option("--max-batch", type=int, default=64)(fn)
    fn = click.option("--timeout", type=float, default=30.0)(fn)
    fn = click.option("--retries", type=int, default=2)(fn)
    return fn


@cli.command()
@click.option("--dataset", "dataset_path", required=True,
              type=click.Path(exists=True))
@click.option("--cache", "cache_path", required=True, type=click.Path())
@click.option("--claim-prefix", default="")
@click.option("--evidence-prefix", default="")
@_provider_options
def embed(dataset_path, cache_path, claim_prefix, evidence_prefix, provider,
          dim, seed, model, max_batch, timeout, retries):
    """Embed every claim and evidence sentence into the cache/store file."""
    dataset = corpus_mod.ingest(dataset_path, infer_scheme(dataset_path))
    prov = make_provider(provider, dim=dim, seed=seed, model=model,
                         max_batch=max_batch, timeout=timeout, retries=retries)
    store = embed_corpus(prov, dataset, cache_path,
                         claim_prefix=claim_prefix,
                         evidence_prefix=evidence_prefix)
    click.echo(f"{len(store)} vectors (dim {store.dimension}) -> {cache_path}")


@cli.group()
def index():
    """Build or query a similarity index file."""


@index.command("build")
@click.option("--store", "store_path", required=True, type=click.Path(exists=True))
@click.option("--kind", type=click.Choice(["flat", "clustered"]), default="flat")
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--n-clusters", type=int, default=32)
@click.option("--n-probe", type=int, default=8)
@click.option("--seed", type=int, default=0)
def index_build(store_path, kind, out_path, n_clusters, n_probe, seed):
    """Index every vector of an embedding store."""
    store = EmbeddingStore.load(store_path)
    entries = [(key, store[key]) for key in store.keys_in_order]
    params = {}
    if kind == "clustered":
        params = {"n_clusters": n_clusters, "n_probe": n_probe, "seed": seed}
    idx = build_index(entries, kind=kind, dim=store.dimension, **params)
    save_index(idx, out_path)
    click.echo(f"{kind} index over {len(idx)} entries -> {out_path}")


@index.command("search")
@click.option("--index", "index_path", required=True, type=click.Path(exists=True))
@click.option("--query-text", required=True)
@click.option("--k", type=int, default=10)
@click.option("--provider", default="hash")
@click.option("--seed", type=int, default=0)
def index_search(index_path, query_text, k, provider, seed):
    """Embed a query string and print its top-k neighbours."""
    idx = load_index(index_path)
    prov = make_provider(provider, dim=idx.dimension, seed=seed)
    from .embed import normalize_vector

    query = normalize_vector(prov.embed_batch([query_text])[0], name="query")
    for result in idx.search(query, k):
        shown = result.key.replace("\x1f", "/")
        click.echo(f"{result.rank:>3}  {result.score:+.6f}  {shown}")


@cli.command()
@click.option("--dataset", "dataset_path", required=True,
              type=click.Path(exists=True))
@click.option("--store", "store_path", required=True, type=click.Path(exists=True))
@click.option("--k", type=int, default=10, show_default=True)
@click.option("--scope", type=click.Choice(["per-claim", "global"]),
              default="per-claim", show_default=True)
@click.option("--index-kind", type=click.Choice(["flat", "clustered"]),
              default="flat")
@click.option("--out", "out_path", required=True, type=click.Path())
def retrieve(dataset_path, store_path, k, scope, index_kind, out_path):
    """Write the top-k evidence sentences for every claim."""
    dataset = corpus_mod.ingest(dataset_path, infer_scheme(dataset_path))
    store = EmbeddingStore.load(store_path)
    sets = retrieve_all(dataset, store, k=k, scope=scope, index_kind=index_kind)
    save_evidence(sets, out_path)
    shortfalls = sum(1 for ev in sets.values() if ev.shortfall)
    click.echo(f"{len(sets)} evidence sets -> {out_path}"
               + (f" ({shortfalls} with fewer than k items)" if shortfalls else ""))


def _build_config(dataset_path, scheme, **kwargs) -> PipelineConfig:
    settings = {"dataset": str(dataset_path), "scheme": scheme}
    settings.update({k: v for k, v in kwargs.items() if v is not None})
    return load_config(None, overrides=settings, env={})


@cli.command()
@click.option("--dataset", "dataset_path", required=True,
              type=click.Path(exists=True))
@click.option("--evidence", "evidence_path", required=True,
              type=click.Path(exists=True))
@click.option("--store", "store_path", required=True, type=click.Path(exists=True))
@click.option("--scheme", required=True, type=click.Choice(["3", "6"]))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--epochs", type=int, default=200, show_default=True)
@click.option("--lr", type=float, default=0.1, show_default=True)
@click.option("--batch-size", type=int, default=32, show_default=True)
@click.option("--l2", type=float, default=0.0)
@click.option("--max-len", type=int, default=512, show_default=True)
@click.option("--split", "train_split", type=click.Choice(corpus_mod.SPLITS),
              default="train", show_default=True)
def train(dataset_path, evidence_path, store_path, scheme, out_path, seed,
          epochs, lr, batch_size, l2, max_len, train_split):
    """Train the softmax head on pooled claim+evidence features."""
    dataset = corpus_mod.ingest(dataset_path, scheme)
    store = EmbeddingStore.load(store_path)
    evidence = load_evidence(evidence_path)
    config = _build_config(
        dataset_path, scheme, seed=seed, epochs=epochs, lr=lr,
        batch_size=batch_size, l2=l2, max_len=max_len,
        train_split=train_split, dim=store.dimension,
    )
    model = train_model(dataset, store, evidence, config)
    save_model(model, out_path, config=head_training_config(config))
    click.echo(f"model (loss {model.initial_loss_:.4f} -> {model.final_loss_:.4f}) "
               f"-> {out_path}")


@cli.command()
@click.option("--model", "model_path", type=click.Path(exists=True), default=None,
              help="Trained head file (omit when --classifier is a URL).")
@click.option("--dataset", "dataset_path", required=True,
              type=click.Path(exists=True))
@click.option("--evidence", "evidence_path", required=True,
              type=click.Path(exists=True))
@click.option("--store", "store_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--classifier", default="head",
              help="'head' or the URL of a classifier service.")
@click.option("--scheme", type=click.Choice(["3", "6"]), default=None,
              help="Required for a remote classifier; else read from the model.")
@click.option("--split", "eval_split", type=click.Choice(corpus_mod.SPLITS),
              default="test", show_default=True)
@click.option("--max-len", type=int, default=512, show_default=True)
@click.option("--timeout", type=float, default=30.0)
@click.option("--retries", type=int, default=2)
def predict(model_path, dataset_path, evidence_path, store_path, out_path,
            classifier, scheme, eval_split, max_len, timeout, retries):
    """Predict veracity for a split and write one JSON line per claim."""
    model = None
    if classifier == "head":
        if model_path is None:
            raise ValidationError("--model is required with the built-in head")
        model = load_model(model_path)
        scheme = model.scheme
    elif scheme is None:
        raise ValidationError("--scheme is required with a remote classifier")
    dataset = corpus_mod.ingest(dataset_path, scheme)
    store = EmbeddingStore.load(store_path)
    evidence = load_evidence(evidence_path)
    config = _build_config(
        dataset_path, scheme, classifier=classifier, eval_split=eval_split,
        max_len=max_len, timeout=timeout, retries=retries, dim=store.dimension,
    )
    predictions = predict_claims(dataset, store, evidence, config, model)
    save_predictions(predictions, out_path)
    click.echo(f"{len(predictions)} predictions -> {out_path}")


@cli.command("eval")
@click.option("--gold", "gold_path", required=True, type=click.Path(exists=True))
@click.option("--pred", "pred_path", required=True, type=click.Path(exists=True))
@click.option("--scheme", required=True, type=click.Choice(["3", "6"]))
@click.option("--out", "out_path", type=click.Path(), default=None,
              help="Also write the report as JSON.")
def eval_cmd(gold_path, pred_path, scheme, out_path):
    """Score predictions against gold labels (per-label and macro P/R/F1)."""
    dataset = corpus_mod.ingest(gold_path, scheme)
    predictions = load_predictions(pred_path)
    gold = [dataset.claim(p.claim_id).label for p in predictions]
    report = score(gold, [p.predicted for p in predictions], scheme)
    click.echo(render_report(report))
    if out_path:
        Path(out_path).write_text(json.dumps(report.to_dict(), indent=2) + "\n")


@cli.command()
@click.option("--sizes", default="1000,10000,100000", show_default=True,
              help="Comma-separated corpus sizes, ascending.")
@click.option("--dim", type=int, default=64, show_default=True)
@click.option("--kind", type=click.Choice(["flat", "clustered", "both"]),
              default="both", show_default=True)
@click.option("--queries", "n_queries", type=int, default=20, show_default=True)
@click.option("--k", type=int, default=10, show_default=True)
@click.option("--seed", type=int, default=0)
@click.option("--n-clusters", type=int, default=32)
@click.option("--n-probe", type=int, default=8)
@click.option("--out", "out_path", type=click.Path(), default=None,
              help="Also write the rows as JSON.")
def bench(sizes, dim, kind, n_queries, k, seed, n_clusters, n_probe, out_path):
    """Measure search latency across corpus sizes."""
    try:
        size_list = [int(s) for s in sizes.split(",") if s.strip()]
    except ValueError:
        raise ValidationError(f"bad --sizes value {sizes!r}") from None
    rows = bench_scaling(size_list, dim=dim, kind=kind, n_queries=n_queries,
                         k=k, seed=seed, n_clusters=n_clusters, n_probe=n_probe)
    click.echo(render_bench(rows))
    if out_path:
        Path(out_path).write_text(bench_to_json(rows) + "\n")


@cli.command()
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--out", "out_dir", type=click.Path(), default=None)
@click.option("--force", is_flag=True)
@click.pass_context
def run(ctx, config_path, seed, out_dir, force):
    """Run the whole pipeline from a config file."""
    group = ctx.obj or {}
    config_path = config_path or group.get("config_path")
    if config_path is None:
        raise ValidationError("run needs --config")
    overrides = {
        "seed": seed if seed is not None else group.get("seed"),
        "out_dir": out_dir or group.get("out_dir"),
    }
    config = load_config(config_path, overrides=overrides)
    result = run_pipeline(config, force=force or group.get("force", False),
                          echo=click.echo)
    if result.skipped:
        click.echo(f"(fresh, skipped: {', '.join(result.skipped)})")
    click.echo(f"artifacts in {result.out_dir}")


# `validate_config` is part of the public surface; `run` exercises it via
# load_config, and library users can call it directly.
__all__ = ["cli", "main", "infer_scheme", "validate_config"]


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        sys.exit(130)
    except click.UsageError as exc:
        exc.show()
        sys.exit(1)
    except click.ClickException as exc:
        exc.show()
        sys.exit(1)
    except DerecError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(exc.exit_code)
    return 0


if __name__ == "__main__":
    sys.exit(main())
