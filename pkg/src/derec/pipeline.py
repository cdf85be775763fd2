"""Staged pipeline orchestration.

``run_pipeline`` drives ingest -> embed -> retrieve -> train/predict ->
score over a config, writing every intermediate artifact to the output
directory.  Each stage is the same function the corresponding CLI command
calls, so running the stages separately produces byte-identical artifacts.

Stages are skipped when their output is fresh: a sidecar ``.meta.json``
records a digest of the stage's inputs and parameters, and a matching
digest short-circuits the stage unless ``force`` is set.  One pipeline run
owns an output directory at a time (lockfile-guarded).
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import corpus as corpus_mod
from .config import PipelineConfig
from .embed import embed_corpus, make_provider
from .errors import DerecError, StageError
from .evaluate import (
    EvaluationReport,
    RuntimeReport,
    render_report,
    render_runtime,
    score,
)
from .retrieve import EvidenceItem, retrieve_all, save_evidence
from .store import EmbeddingStore
from .verify import (
    FEATURE_SPEC,
    ClassifierInput,
    RemoteClassifier,
    SoftmaxHead,
    VeracityPrediction,
    build_input,
    load_model,
    pool_features,
    save_model,
    save_predictions,
)

ARTIFACTS = {
    "dataset": "dataset.jsonl",
    "store": "embeddings.drec",
    "evidence": "evidence.jsonl",
    "model": "model.drhd",
    "predictions": "predictions.jsonl",
    "report": "report.json",
    "runtime": "runtime.json",
}


@dataclass
class PipelineResult:
    out_dir: Path
    paths: dict[str, Path]
    eval_report: EvaluationReport
    runtime_report: RuntimeReport
    skipped: list[str]


# ---------------------------------------------------------------------------
# Feature assembly shared by train and predict
# ---------------------------------------------------------------------------

def _address_resolver(dataset):
    """Map an evidence item back to its stored sentence address.

    Per-claim scope resolves exactly through the owning claim; global-scope
    items may come from another claim's reports, so fall back to a
    corpus-wide (report_id, position) lookup (first match in dataset order
    when report ids collide across claims).
    """
    by_pair: dict[tuple[str, int], str] = {}
    known: set[str] = set()
    for sentence in dataset.iter_sentences():
        by_pair.setdefault((sentence.report_id, sentence.position), sentence.address)
        known.add(sentence.address)

    def resolve(claim_id: str, item: EvidenceItem) -> str:
        direct = corpus_mod.sentence_address(claim_id, item.report_id, item.position)
        if direct in known:
            return direct
        fallback = by_pair.get((item.report_id, item.position))
        if fallback is None:
            from .errors import MissingEmbeddingError
            raise MissingEmbeddingError(direct)
        return fallback

    return resolve


def claim_features(dataset, store: EmbeddingStore,
                   evidence: dict[str, list[EvidenceItem]], claim_ids,
                   max_len: int = 512) -> tuple[np.ndarray, list[ClassifierInput]]:
    """Pooled feature matrix plus the classifier inputs, one row per claim.

    Evidence items dropped by the sequence length budget are also left out
    of the pooled features, so the two classifier routes see the same
    evidence.
    """
    resolve = _address_resolver(dataset)
    rows: list[np.ndarray] = []
    inputs: list[ClassifierInput] = []
    for claim_id in claim_ids:
        claim = dataset.claim(claim_id)
        items = evidence.get(claim_id, [])
        built = build_input(claim_id, claim.text, items, max_len=max_len)
        kept = items[: len(built.evidence_texts)]
        claim_vec = store[corpus_mod.claim_address(claim_id)]
        if kept:
            vectors = np.vstack([store[resolve(claim_id, it)] for it in kept])
            scores = [it.score for it in kept]
        else:
            vectors, scores = None, None
        rows.append(pool_features(claim_vec, vectors, scores))
        inputs.append(built)
    matrix = (
        np.vstack(rows) if rows
        else np.empty((0, 3 * store.dimension), dtype=np.float64)
    )
    return matrix, inputs


def head_training_config(config: PipelineConfig) -> dict:
    return {
        "scheme": config.scheme,
        "feature_spec": FEATURE_SPEC,
        "dim": config.dim,
        "learning_rate": config.lr,
        "epochs": config.epochs,
        "batch_size": config.batch_size,
        "l2": config.l2,
        "seed": config.seed,
        "max_len": config.max_len,
    }


def train_model(dataset, store, evidence, config: PipelineConfig) -> SoftmaxHead:
    train_claims = [c.id for c in dataset.claims_in_split(config.train_split)]
    if not train_claims:
        raise DerecError(f"no claims in split {config.train_split!r}")
    X, _ = claim_features(dataset, store, evidence, train_claims, config.max_len)
    y = [dataset.claim(cid).label for cid in train_claims]
    head = SoftmaxHead(
        scheme=config.scheme, learning_rate=config.lr, epochs=config.epochs,
        batch_size=config.batch_size, l2=config.l2, seed=config.seed,
    )
    return head.fit(X, y)


def predict_claims(dataset, store, evidence, config: PipelineConfig,
                   model: SoftmaxHead | None = None) -> list[VeracityPrediction]:
    claim_ids = [c.id for c in dataset.claims_in_split(config.eval_split)]
    if not claim_ids:
        raise DerecError(f"no claims in split {config.eval_split!r}")
    X, inputs = claim_features(dataset, store, evidence, claim_ids, config.max_len)
    if config.classifier == "head":
        if model is None:
            raise DerecError("built-in classifier needs a trained model")
        return model.predictions(X, claim_ids)
    remote = RemoteClassifier(
        config.classifier, config.scheme,
        timeout=config.timeout, retries=config.retries,
    )
    return remote.predict(inputs)


# ---------------------------------------------------------------------------
# Freshness and locking
# ---------------------------------------------------------------------------

def _file_digest(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _stage_digest(input_paths: list[Path], params: dict) -> str:
    h = hashlib.sha256()
    for path in input_paths:
        h.update(_file_digest(path).encode())
    h.update(json.dumps(params, sort_keys=True).encode())
    return h.hexdigest()


def _is_fresh(out_path: Path, digest: str) -> bool:
    meta = out_path.with_suffix(out_path.suffix + ".meta.json")
    if not (out_path.exists() and meta.exists()):
        return False
    try:
        return json.loads(meta.read_text())["inputs"] == digest
    except (json.JSONDecodeError, KeyError):
        return False


def _mark_fresh(out_path: Path, digest: str) -> None:
    meta = out_path.with_suffix(out_path.suffix + ".meta.json")
    meta.write_text(json.dumps({"inputs": digest}) + "\n")


@contextmanager
def _run_lock(out_dir: Path):
    lock = out_dir / ".derec.lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise DerecError(
            f"output directory {out_dir} is locked by another run "
            f"(remove {lock} if that run is dead)"
        ) from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


# ---------------------------------------------------------------------------
# The run
# ---------------------------------------------------------------------------

def run_pipeline(config: PipelineConfig, *, force: bool = False,
                 echo=lambda msg: None) -> PipelineResult:
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {name: out_dir / fname for name, fname in ARTIFACTS.items()}
    skipped: list[str] = []
    t_start = time.perf_counter()

    with _run_lock(out_dir):
        # -- ingest (validated, canonicalized copy) -------------------------
        source = Path(config.dataset)
        if not source.exists():
            raise DerecError(f"dataset not found: {source}")
        ingest_digest = _stage_digest([source], {"scheme": config.scheme})
        dataset = None
        if not force and _is_fresh(paths["dataset"], ingest_digest):
            skipped.append("ingest")
        else:
            dataset = corpus_mod.ingest(source, config.scheme)
            corpus_mod.save_dataset(dataset, paths["dataset"])
            _mark_fresh(paths["dataset"], ingest_digest)
        if dataset is None:
            dataset = corpus_mod.ingest(paths["dataset"], config.scheme)
        echo(f"ingest: {len(dataset)} claims")

        timings: list[tuple[str, float]] = []

        def timed(stage_name, fn):
            t0 = time.perf_counter()
            try:
                result = fn()
            except Exception as exc:
                partial = RuntimeReport(
                    stages=tuple(timings),
                    total_seconds=time.perf_counter() - t_start,
                    complete=False,
                )
                paths["runtime"].write_text(
                    json.dumps(partial.to_dict(), indent=2) + "\n"
                )
                if isinstance(exc, StageError):
                    raise
                raise StageError(stage_name, exc, partial_report=partial) from exc
            timings.append((stage_name, time.perf_counter() - t0))
            return result

        # -- evidence extraction --------------------------------------------
        provider_params = {
            "provider": config.provider, "dim": config.dim, "seed": config.seed,
            "model": config.model, "claim_prefix": config.claim_prefix,
            "evidence_prefix": config.evidence_prefix,
        }
        embed_digest = _stage_digest([paths["dataset"]], provider_params)

        def do_embed() -> EmbeddingStore:
            if not force and _is_fresh(paths["store"], embed_digest):
                skipped.append("evidence_extraction")
                return EmbeddingStore.load(paths["store"])
            provider = make_provider(
                config.provider, dim=config.dim, seed=config.seed,
                model=config.model, max_batch=config.max_batch,
                timeout=config.timeout, retries=config.retries,
            )
            result = embed_corpus(
                provider, dataset, paths["store"],
                claim_prefix=config.claim_prefix,
                evidence_prefix=config.evidence_prefix,
            )
            _mark_fresh(paths["store"], embed_digest)
            return result

        store = timed("evidence_extraction", do_embed)
        echo(f"embed: {len(store)} vectors (dim {store.dimension})")

        # -- evidence retrieval ----------------------------------------------
        retrieve_params = {
            "k": config.k, "scope": config.scope, "index_kind": config.index_kind,
            "n_clusters": config.n_clusters, "n_probe": config.n_probe,
        }
        retrieve_digest = _stage_digest(
            [paths["dataset"], paths["store"]], retrieve_params
        )

        def do_retrieve():
            if not force and _is_fresh(paths["evidence"], retrieve_digest):
                skipped.append("evidence_retrieval")
                from .retrieve import load_evidence
                return load_evidence(paths["evidence"])
            sets = retrieve_all(
                dataset, store, k=config.k, scope=config.scope,
                index_kind=config.index_kind,
            )
            save_evidence(sets, paths["evidence"])
            _mark_fresh(paths["evidence"], retrieve_digest)
            return {cid: list(ev.items) for cid, ev in sets.items()}

        evidence = timed("evidence_retrieval", do_retrieve)
        echo(f"retrieve: {len(evidence)} evidence sets (k={config.k})")

        # -- veracity prediction ---------------------------------------------
        verify_params = head_training_config(config) | {
            "classifier": config.classifier,
            "train_split": config.train_split,
            "eval_split": config.eval_split,
        }
        verify_digest = _stage_digest(
            [paths["dataset"], paths["store"], paths["evidence"]], verify_params
        )

        def do_verify() -> list[VeracityPrediction]:
            model = None
            if config.classifier == "head":
                if not force and _is_fresh(paths["model"], verify_digest):
                    model = load_model(paths["model"])
                    skipped.append("train")
                else:
                    model = train_model(dataset, store, evidence, config)
                    save_model(model, paths["model"],
                               config=head_training_config(config))
                    _mark_fresh(paths["model"], verify_digest)
            if not force and _is_fresh(paths["predictions"], verify_digest):
                skipped.append("predict")
                from .verify import load_predictions
                return load_predictions(paths["predictions"])
            predictions = predict_claims(dataset, store, evidence, config, model)
            save_predictions(predictions, paths["predictions"])
            _mark_fresh(paths["predictions"], verify_digest)
            return predictions

        predictions = timed("veracity_prediction", do_verify)
        echo(f"predict: {len(predictions)} claims ({config.eval_split} split)")

        # -- scoring ----------------------------------------------------------
        gold = [
            dataset.claim(p.claim_id).label for p in predictions
        ]
        eval_report = score(gold, [p.predicted for p in predictions], config.scheme)
        paths["report"].write_text(
            json.dumps(eval_report.to_dict(), indent=2) + "\n"
        )

        runtime_report = RuntimeReport(
            stages=tuple(timings),
            total_seconds=time.perf_counter() - t_start,
            complete=True,
        )
        paths["runtime"].write_text(
            json.dumps(runtime_report.to_dict(), indent=2) + "\n"
        )
        echo(render_report(eval_report))
        echo(render_runtime(runtime_report))

    return PipelineResult(
        out_dir=out_dir,
        paths=paths,
        eval_report=eval_report,
        runtime_report=runtime_report,
        skipped=skipped,
    )


def profile_run(config: PipelineConfig, *, force: bool = True) -> RuntimeReport:
    """Run the pipeline and return its per-stage wall-clock report."""
    return run_pipeline(config, force=force).runtime_report
