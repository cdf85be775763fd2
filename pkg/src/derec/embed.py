"""Text-to-vector providers, unit normalization and corpus-wide embedding.

A provider exposes ``info`` (name, dimension, batch limit) and
``embed_batch(texts) -> float32 matrix``; outputs are raw, not yet
normalized.  Two providers are built in:

* :class:`HashingTextEmbedder` — a seeded feature-hashing embedder, so the
  whole pipeline runs offline and deterministically;
* :class:`RemoteEmbeddingProvider` — a client for an embedding service
  speaking the JSON contract ``POST {"texts": [...], "model": "..."}`` ->
  ``{"embeddings": [[...], ...]}``.

:func:`embed_corpus` embeds every claim and evidence sentence of a dataset,
normalizes once at store-write time, and keeps a persistent on-disk cache:
a warm rerun issues zero provider calls, and a provider failure mid-run
leaves a resumable partial cache.
"""

from __future__ import annotations

import hashlib
import re
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np
import requests
from sklearn.base import BaseEstimator, TransformerMixin

from .corpus import Dataset, claim_address
from .errors import (
    DimensionMismatchError,
    ProviderError,
    ProviderUnreachableError,
    ZeroVectorError,
)
from .store import EmbeddingStore, StoreWriter, read_partial
from .validation import as_vector, check_texts


@dataclass(frozen=True)
class ProviderInfo:
    """Descriptor of an embedding provider: fixed dimension, batch limit."""

    name: str
    dimension: int
    endpoint: str | None = None
    max_batch: int = 64


class EmbeddingProvider(Protocol):
    @property
    def info(self) -> ProviderInfo: ...

    def embed_batch(self, texts: Sequence[str]) -> np.ndarray: ...


# ---------------------------------------------------------------------------
# Normalization
# ---------------------------------------------------------------------------

def normalize_vector(v, *, name: str = "vector") -> np.ndarray:
    """Scale to unit L2 norm (float64 math; direction preserved).

    Raises :class:`ZeroVectorError` for zero-norm input rather than
    emitting garbage.
    """
    arr = as_vector(v, name=name)
    norm = float(np.linalg.norm(arr))
    if norm < 1e-30:
        raise ZeroVectorError(name)
    return arr / norm


def normalize_rows(X: np.ndarray, *, names: Sequence[str] | None = None) -> np.ndarray:
    X64 = np.asarray(X, dtype=np.float64)
    norms = np.linalg.norm(X64, axis=1)
    zero = np.nonzero(norms < 1e-30)[0]
    if zero.size:
        i = int(zero[0])
        raise ZeroVectorError(names[i] if names is not None else f"row {i}")
    return X64 / norms[:, None]


# ---------------------------------------------------------------------------
# Built-in hashing provider
# ---------------------------------------------------------------------------

_TOKEN = re.compile(r"[a-z0-9]+(?:'[a-z0-9]+)?")


def _hash_gram(seed: int, gram: str) -> int:
    digest = hashlib.blake2b(f"{seed}|{gram}".encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


class HashingTextEmbedder(TransformerMixin, BaseEstimator):
    """Deterministic feature-hashing sentence embedder.

    Lowercased word tokens and adjacent token pairs are hashed into ``dim``
    signed buckets (blake2b keyed by the seed), giving a sparse bag-of-ngrams
    vector.  Stateless: ``fit`` is a no-op and identical text always maps to
    bitwise-identical output, across runs and platforms.
    """

    def __init__(self, dim: int = 64, seed: int = 0, prefix: str = ""):
        self.dim = dim
        self.seed = seed
        self.prefix = prefix

    def fit(self, X=None, y=None):
        return self

    def _embed_one(self, text: str) -> np.ndarray:
        tokens = _TOKEN.findall((self.prefix + text).lower())
        grams = tokens + [f"{a} {b}" for a, b in zip(tokens, tokens[1:])]
        vec = np.zeros(self.dim, dtype=np.float64)
        for gram in grams:
            h = _hash_gram(self.seed, gram)
            bucket = (h >> 1) % self.dim
            vec[bucket] += 1.0 if (h & 1) == 0 else -1.0
        return vec.astype(np.float32)

    def transform(self, X: Sequence[str]) -> np.ndarray:
        texts = check_texts(X)
        return np.vstack([self._embed_one(t) for t in texts])

    # provider contract
    @property
    def info(self) -> ProviderInfo:
        return ProviderInfo(name="hash", dimension=self.dim, max_batch=1024)

    def embed_batch(self, texts: Sequence[str]) -> np.ndarray:
        return self.transform(texts)


# ---------------------------------------------------------------------------
# Remote provider
# ---------------------------------------------------------------------------

class RemoteEmbeddingProvider:
    """HTTP client for an external embedding service.

    Batches larger than ``max_batch`` are split transparently.  Connection
    problems and 5xx responses are retried ``retries`` times before raising
    :class:`ProviderUnreachableError`; a response with the wrong vector
    dimension is fatal immediately.
    """

    def __init__(self, endpoint: str, dimension: int, *, model: str = "default",
                 max_batch: int = 64, timeout: float = 30.0, retries: int = 2,
                 backoff: float = 0.2, session=None):
        self.endpoint = endpoint
        self.dimension = int(dimension)
        self.model = model
        self.max_batch = max(1, int(max_batch))
        self.timeout = timeout
        self.retries = max(0, int(retries))
        self.backoff = backoff
        self._session = session or requests.Session()

    @property
    def info(self) -> ProviderInfo:
        return ProviderInfo(
            name=self.model, dimension=self.dimension,
            endpoint=self.endpoint, max_batch=self.max_batch,
        )

    def _post_chunk(self, chunk: list[str]) -> np.ndarray:
        payload = {"texts": chunk, "model": self.model}
        last_error: Exception | None = None
        for attempt in range(self.retries + 1):
            try:
                response = self._session.post(
                    self.endpoint, json=payload, timeout=self.timeout
                )
            except requests.RequestException as exc:
                last_error = exc
            else:
                if response.status_code >= 500:
                    last_error = ProviderError(
                        f"server error {response.status_code} from {self.endpoint}"
                    )
                elif response.status_code >= 400:
                    raise ProviderError(
                        f"request rejected ({response.status_code}): {response.text[:200]}"
                    )
                else:
                    return self._parse(response, len(chunk))
            if attempt < self.retries:
                time.sleep(self.backoff * (attempt + 1))
        raise ProviderUnreachableError(
            f"embedding provider at {self.endpoint} unreachable "
            f"after {self.retries + 1} attempts: {last_error}"
        )

    def _parse(self, response, expected_rows: int) -> np.ndarray:
        try:
            body = response.json()
            embeddings = body["embeddings"]
        except Exception as exc:
            raise ProviderError(f"malformed provider response: {exc}") from exc
        if len(embeddings) != expected_rows:
            raise ProviderError(
                f"provider returned {len(embeddings)} embeddings for "
                f"{expected_rows} texts"
            )
        matrix = np.asarray(embeddings, dtype=np.float32)
        if matrix.ndim != 2 or matrix.shape[1] != self.dimension:
            got = matrix.shape[1] if matrix.ndim == 2 else -1
            raise DimensionMismatchError(self.dimension, got, "provider response")
        return matrix

    def embed_batch(self, texts: Sequence[str]) -> np.ndarray:
        texts = check_texts(texts)
        chunks = [
            texts[i : i + self.max_batch]
            for i in range(0, len(texts), self.max_batch)
        ]
        return np.vstack([self._post_chunk(chunk) for chunk in chunks])


def make_provider(spec: str, *, dim: int, seed: int = 0, prefix: str = "",
                  model: str = "default", max_batch: int = 64,
                  timeout: float = 30.0, retries: int = 2) -> EmbeddingProvider:
    """Build a provider from a CLI-style spec: ``hash`` or an HTTP URL."""
    if spec == "hash":
        return HashingTextEmbedder(dim=dim, seed=seed, prefix=prefix)
    if spec.startswith(("http://", "https://")):
        return RemoteEmbeddingProvider(
            spec, dim, model=model, max_batch=max_batch,
            timeout=timeout, retries=retries,
        )
    raise ProviderError(f"unknown embedding provider {spec!r}")


# ---------------------------------------------------------------------------
# Corpus-wide embedding with a persistent cache
# ---------------------------------------------------------------------------

def corpus_addresses(dataset: Dataset, *, claim_prefix: str = "",
                     evidence_prefix: str = "") -> list[tuple[str, str]]:
    """(address, text-to-embed) for every claim and evidence sentence,
    in deterministic dataset order."""
    pairs: list[tuple[str, str]] = []
    for claim in dataset.claims:
        pairs.append((claim_address(claim.id), claim_prefix + claim.text))
    for sentence in dataset.iter_sentences():
        pairs.append((sentence.address, evidence_prefix + sentence.text))
    return pairs


def embed_corpus(provider: EmbeddingProvider, dataset: Dataset, cache_path,
                 *, claim_prefix: str = "", evidence_prefix: str = "",
                 batch_size: int | None = None) -> EmbeddingStore:
    """Embed every claim and sentence, reusing the on-disk cache.

    The cache file doubles as the finished store.  Cached entries that fail
    integrity checks (non-finite values, off-unit norm) are recomputed;
    intact entries are never re-requested.
    """
    cache_path = Path(cache_path)
    dim = provider.info.dimension
    batch = batch_size or provider.info.max_batch

    pairs = corpus_addresses(
        dataset, claim_prefix=claim_prefix, evidence_prefix=evidence_prefix
    )

    cached: dict[str, np.ndarray] = {}
    if cache_path.exists():
        cached_dim, cached = read_partial(cache_path)
        if cached_dim != dim:
            raise DimensionMismatchError(dim, cached_dim, str(cache_path))

    missing = [(addr, text) for addr, text in pairs if addr not in cached]

    if missing:
        # Rewrite valid entries first, then append fresh ones; a crash while
        # appending still leaves every flushed record readable.
        writer = StoreWriter(cache_path, dim)
        try:
            wanted = {addr for addr, _ in pairs}
            for addr, vec in cached.items():
                if addr in wanted:
                    writer.add(addr, vec)
            for start in range(0, len(missing), batch):
                chunk = missing[start : start + batch]
                raw = provider.embed_batch([text for _, text in chunk])
                if raw.shape != (len(chunk), dim):
                    raise DimensionMismatchError(
                        dim, raw.shape[-1], provider.info.name
                    )
                for (addr, _), row in zip(chunk, raw):
                    unit = normalize_vector(row, name=addr).astype(np.float32)
                    writer.add(addr, unit)
                    cached[addr] = unit
                writer.flush()
        finally:
            writer.close()

    return EmbeddingStore(dim, [(addr, cached[addr]) for addr, _ in pairs])
