"""Inner-product similarity indexes over unit vectors.

Two kinds share one contract: an exact flat index that scans every entry,
and a clustered inverted-list index (spherical k-means, probe the nearest
centroids) that trades a little recall for sub-scan query cost.
:func:`brute_force_topk` is the reference implementation both are tested
against — a full scan with a stable sort, kept deliberately separate from
the partition-based selection the indexes use.

Scores accumulate in float64 over the stored float32 components, and ties
break by ascending insertion order, so identical inputs give identical
results across runs.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from hashlib import blake2b
from pathlib import Path
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .errors import DuplicateKeyError, FileFormatError
from .validation import (
    as_matrix,
    as_vector,
    check_dimension,
    check_positive_int,
    check_unit_rows,
    check_unit_vector,
)


@dataclass(frozen=True)
class SearchResult:
    key: str
    score: float
    rank: int  # 1-based


def _prepare_fit(X, keys) -> tuple[np.ndarray, tuple[str, ...]]:
    X = as_matrix(X, name="vectors")
    if keys is None:
        keys = [str(i) for i in range(X.shape[0])]
    else:
        keys = [str(k) for k in keys]
        if len(keys) != X.shape[0]:
            raise FileFormatError(
                f"{len(keys)} keys for {X.shape[0]} vectors"
            )
    seen: set[str] = set()
    for key in keys:
        if key in seen:
            raise DuplicateKeyError(key)
        seen.add(key)
    if X.shape[0]:
        check_unit_rows(X, names=keys)
    return X, tuple(keys)


def _prepare_query(query, dim: int) -> np.ndarray:
    q = as_vector(query, name="query")
    check_dimension(q.shape[0], dim, context="query")
    check_unit_vector(q, name="query")
    return q


def _select_topk(scores: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k best scores, ordered by score descending then by
    ascending position (the deterministic tie rule)."""
    n = scores.shape[0]
    if k >= n:
        return np.argsort(-scores, kind="stable")
    kth = np.partition(scores, n - k)[n - k]
    above = np.nonzero(scores > kth)[0]
    order_above = above[np.argsort(-scores[above], kind="stable")]
    tied = np.nonzero(scores == kth)[0][: k - above.size]
    return np.concatenate([order_above, tied])


def _select_topk_keyed(scores: np.ndarray, tiebreak: np.ndarray,
                       k: int) -> np.ndarray:
    """Positions of the k best scores where ties break by ascending
    ``tiebreak`` value rather than by position.

    Lets the clustered index select over unsorted candidate lists without
    first sorting all candidates into insertion order.
    """
    n = scores.shape[0]
    if k >= n:
        return np.lexsort((tiebreak, -scores))
    kth = np.partition(scores, n - k)[n - k]
    above = np.nonzero(scores > kth)[0]
    above = above[np.lexsort((tiebreak[above], -scores[above]))]
    tied = np.nonzero(scores == kth)[0]
    tied = tied[np.argsort(tiebreak[tied], kind="stable")][: k - above.size]
    return np.concatenate([above, tied])


def _results(keys: Sequence[str], indices: np.ndarray,
             scores: np.ndarray) -> list[SearchResult]:
    return [
        SearchResult(key=keys[int(i)], score=float(scores[int(i)]), rank=rank)
        for rank, i in enumerate(indices, start=1)
    ]


def brute_force_topk(entries: Sequence[tuple[str, np.ndarray]], query,
                     k: int) -> list[SearchResult]:
    """Exact top-k by exhaustive scan; the oracle the indexes are held to.

    Scores every entry, then takes a single stable sort by descending
    score — no partitioning, no shared selection code with the indexes.
    """
    check_positive_int(k, name="k")
    keys = [key for key, _ in entries]
    if not keys:
        return []
    matrix = as_matrix([vec for _, vec in entries], name="vectors")
    check_unit_rows(matrix, names=keys)
    q = _prepare_query(query, matrix.shape[1])
    scores = matrix.astype(np.float64) @ q
    order = np.argsort(-scores, kind="stable")[:k]
    return _results(keys, order, scores)


class FlatIndex(BaseEstimator):
    """Exact inner-product index: every query scores every entry."""

    kind = "flat"

    def fit(self, X, keys=None):
        X, keys = _prepare_fit(X, keys)
        self.keys_ = keys
        self.vectors_ = X  # float32, persisted verbatim
        self._scores64 = X.astype(np.float64)
        return self

    @property
    def dimension(self) -> int:
        check_is_fitted(self, "vectors_")
        return int(self.vectors_.shape[1])

    def __len__(self) -> int:
        check_is_fitted(self, "vectors_")
        return int(self.vectors_.shape[0])

    def entries(self) -> list[tuple[str, np.ndarray]]:
        check_is_fitted(self, "vectors_")
        return [(k, self.vectors_[i]) for i, k in enumerate(self.keys_)]

    def search(self, query, k: int) -> list[SearchResult]:
        check_is_fitted(self, "vectors_")
        check_positive_int(k, name="k")
        if not self.keys_:
            return []
        q = _prepare_query(query, self.dimension)
        scores = self._scores64 @ q
        top = _select_topk(scores, k)
        return _results(self.keys_, top, scores)


class ClusteredIndex(BaseEstimator):
    """Inverted-list index over spherical k-means clusters.

    ``fit`` runs a fixed number of k-means iterations (centroids kept unit
    length, assignment by maximum inner product; centroid seeds sampled
    with the given seed; an emptied cluster is re-seeded from the largest
    cluster's farthest member).  ``search`` scores only the members of the
    ``n_probe`` clusters whose centroids best match the query, probing
    further clusters only when that yields fewer than k candidates.
    """

    kind = "clustered"

    def __init__(self, n_clusters: int = 32, n_probe: int = 8,
                 n_iter: int = 20, seed: int = 0):
        self.n_clusters = n_clusters
        self.n_probe = n_probe
        self.n_iter = n_iter
        self.seed = seed

    def fit(self, X, keys=None):
        X, keys = _prepare_fit(X, keys)
        n = X.shape[0]
        n_clusters = min(self.n_clusters, n) if n else 0
        self.keys_ = keys
        self.vectors_ = X
        X64 = X.astype(np.float64)

        if n == 0:
            self.centroids_ = np.empty((0, X.shape[1]), dtype=np.float64)
            self.assignments_ = np.empty(0, dtype=np.int64)
        else:
            self.centroids_, self.assignments_ = _spherical_kmeans(
                X64, n_clusters, self.n_iter, self.seed
            )
        self._build_lists(X64)
        return self

    def _build_lists(self, X64: np.ndarray) -> None:
        n_clusters = self.centroids_.shape[0]
        members: list[np.ndarray] = []
        matrices: list[np.ndarray] = []
        for c in range(n_clusters):
            idx = np.nonzero(self.assignments_ == c)[0]  # ascending order
            members.append(idx)
            matrices.append(X64[idx])
        self._members = members
        self._matrices = matrices

    @property
    def dimension(self) -> int:
        check_is_fitted(self, "vectors_")
        return int(self.vectors_.shape[1])

    def __len__(self) -> int:
        check_is_fitted(self, "vectors_")
        return int(self.vectors_.shape[0])

    def entries(self) -> list[tuple[str, np.ndarray]]:
        check_is_fitted(self, "vectors_")
        return [(k, self.vectors_[i]) for i, k in enumerate(self.keys_)]

    def search(self, query, k: int) -> list[SearchResult]:
        check_is_fitted(self, "vectors_")
        check_positive_int(k, name="k")
        n = len(self)
        if n == 0:
            return []
        q = _prepare_query(query, self.dimension)

        centroid_scores = self.centroids_ @ q
        probe_order = _select_topk(centroid_scores, centroid_scores.shape[0])
        target = min(k, n)

        chosen: list[int] = []
        covered = 0
        for c in probe_order:
            chosen.append(int(c))
            covered += self._members[int(c)].size
            if len(chosen) >= self.n_probe and covered >= target:
                break

        cand_idx = np.concatenate([self._members[c] for c in chosen])
        cand_scores = np.concatenate([self._matrices[c] @ q for c in chosen])
        top = _select_topk_keyed(cand_scores, cand_idx, k)
        return [
            SearchResult(
                key=self.keys_[int(cand_idx[i])],
                score=float(cand_scores[int(i)]),
                rank=rank,
            )
            for rank, i in enumerate(top, start=1)
        ]


def _spherical_kmeans(X64: np.ndarray, n_clusters: int, n_iter: int,
                      seed: int) -> tuple[np.ndarray, np.ndarray]:
    """K-means on the unit sphere: cosine assignment, renormalized means."""
    n = X64.shape[0]
    rng = np.random.default_rng(seed)
    centroids = X64[rng.choice(n, size=n_clusters, replace=False)].copy()

    assignments = np.zeros(n, dtype=np.int64)
    for _ in range(n_iter):
        sims = X64 @ centroids.T
        assignments = np.argmax(sims, axis=1)  # ties: lowest cluster id
        sizes = np.bincount(assignments, minlength=n_clusters)

        means = np.zeros_like(centroids)
        np.add.at(means, assignments, X64)
        norms = np.linalg.norm(means, axis=1)

        # Degenerate clusters (no members, or members cancelling out) are
        # re-seeded from the largest cluster's worst-matched member.
        donated: set[int] = set()
        for c in np.nonzero((sizes == 0) | (norms < 1e-12))[0]:
            donor = int(np.argmax(sizes))
            donor_members = [
                int(i) for i in np.nonzero(assignments == donor)[0]
                if int(i) not in donated
            ]
            if not donor_members:
                continue
            member_sims = X64[donor_members] @ centroids[donor]
            farthest = donor_members[int(np.argmin(member_sims))]
            means[c] = X64[farthest]
            norms[c] = np.linalg.norm(means[c])
            donated.add(farthest)
            sizes[donor] -= 1
            sizes[c] += 1

        ok = norms >= 1e-12
        centroids[ok] = means[ok] / norms[ok, None]

    assignments = np.argmax(X64 @ centroids.T, axis=1)
    return centroids, assignments


def build_index(entries: Sequence[tuple[str, np.ndarray]], kind: str = "flat",
                **params) -> FlatIndex | ClusteredIndex:
    """Functional facade: build an index of the given kind from entries."""
    keys = [k for k, _ in entries]
    if entries:
        X = np.vstack([np.asarray(v, dtype=np.float32) for _, v in entries])
    else:
        dim = params.pop("dim", 0)
        X = np.empty((0, dim), dtype=np.float32)
    if kind == "flat":
        return FlatIndex().fit(X, keys=keys)
    if kind == "clustered":
        return ClusteredIndex(**params).fit(X, keys=keys)
    raise FileFormatError(f"unknown index kind {kind!r}")


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

MAGIC = b"DRIX"
VERSION = 1
_KIND_CODES = {"flat": 0, "clustered": 1}
_KIND_NAMES = {v: k for k, v in _KIND_CODES.items()}


def _checksum(body: bytes) -> bytes:
    return blake2b(body, digest_size=8).digest()


def save_index(index: FlatIndex | ClusteredIndex, path) -> None:
    check_is_fitted(index, "vectors_")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<IBIQ", VERSION, _KIND_CODES[index.kind],
                          index.dimension, len(index)))
    for key, vec in index.entries():
        raw = key.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(np.asarray(vec, dtype="<f4").tobytes())
    if index.kind == "clustered":
        buf.write(struct.pack("<IIIQ", index.centroids_.shape[0],
                              index.n_probe, index.n_iter, index.seed))
        buf.write(index.centroids_.astype("<f8").tobytes())
        buf.write(index.assignments_.astype("<i8").tobytes())
    body = buf.getvalue()
    Path(path).write_bytes(body + _checksum(body))


def load_index(path) -> FlatIndex | ClusteredIndex:
    """Reload a persisted index; entry order, vectors and tie behaviour are
    identical to the index that was saved."""
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC) + 8:
        raise FileFormatError(f"{path}: too short to be an index file")
    body, tail = data[:-8], data[-8:]
    if body[:4] != MAGIC:
        raise FileFormatError(f"{path}: bad magic {body[:4]!r}")
    if _checksum(body) != tail:
        raise FileFormatError(f"{path}: checksum mismatch")

    view = memoryview(body)
    offset = 4

    def take(fmt: str):
        nonlocal offset
        size = struct.calcsize(fmt)
        if offset + size > len(body):
            raise FileFormatError(f"{path}: truncated at byte {offset}")
        values = struct.unpack_from(fmt, view, offset)
        offset += size
        return values

    (version, kind_code, dim, count) = take("<IBIQ")
    if version != VERSION:
        raise FileFormatError(f"{path}: unsupported version {version}")
    if kind_code not in _KIND_NAMES:
        raise FileFormatError(f"{path}: unknown kind byte {kind_code}")

    keys: list[str] = []
    rows = np.empty((count, dim), dtype=np.float32)
    for i in range(count):
        (key_len,) = take("<I")
        if offset + key_len + 4 * dim > len(body):
            raise FileFormatError(f"{path}: truncated at byte {offset}")
        keys.append(bytes(view[offset : offset + key_len]).decode("utf-8"))
        offset += key_len
        rows[i] = np.frombuffer(view, dtype="<f4", count=dim, offset=offset)
        offset += 4 * dim

    if _KIND_NAMES[kind_code] == "flat":
        index = FlatIndex()
        index.keys_ = tuple(keys)
        index.vectors_ = rows
        index._scores64 = rows.astype(np.float64)
        return index

    (n_clusters, n_probe, n_iter, seed) = take("<IIIQ")
    centroid_bytes = 8 * n_clusters * dim
    if offset + centroid_bytes + 8 * count != len(body):
        raise FileFormatError(f"{path}: clustered block has wrong size")
    centroids = np.frombuffer(
        view, dtype="<f8", count=n_clusters * dim, offset=offset
    ).reshape(n_clusters, dim).copy()
    offset += centroid_bytes
    assignments = np.frombuffer(view, dtype="<i8", count=count, offset=offset).copy()

    index = ClusteredIndex(
        n_clusters=n_clusters, n_probe=n_probe, n_iter=n_iter, seed=int(seed)
    )
    index.keys_ = tuple(keys)
    index.vectors_ = rows
    index.centroids_ = centroids
    index.assignments_ = assignments
    index._build_lists(rows.astype(np.float64))
    return index
