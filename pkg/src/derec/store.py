"""Binary embedding store.

File layout (all integers little-endian)::

    magic "DREC" | version u32 | dim u32 | count u64
    count records of: key_len u32 | key (UTF-8) | dim float32 values

The writer appends records incrementally and patches the header count on
close, so a crashed run leaves a readable partial file: tolerant reads
stop at the first truncated record.  Stored vectors are unit-normalized;
records whose values are non-finite or drift off unit norm are treated as
corrupt and dropped by tolerant reads.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Iterable, Iterator, Mapping

import numpy as np

from .errors import FileFormatError, MissingEmbeddingError
from .validation import UNIT_NORM_ATOL

MAGIC = b"DREC"
VERSION = 1
_HEADER = struct.Struct("<4sIIQ")
_KEYLEN = struct.Struct("<I")
_COUNT_OFFSET = _HEADER.size - 8


class StoreWriter:
    """Incremental writer; safe to close after a partial run."""

    def __init__(self, path, dim: int):
        self.path = Path(path)
        self.dim = int(dim)
        self._fh = self.path.open("wb")
        self._fh.write(_HEADER.pack(MAGIC, VERSION, self.dim, 0))
        self._count = 0

    def add(self, key: str, vector: np.ndarray) -> None:
        values = np.asarray(vector, dtype="<f4")
        if values.shape != (self.dim,):
            raise FileFormatError(
                f"vector for key {key!r} has shape {values.shape}, expected ({self.dim},)"
            )
        raw = key.encode("utf-8")
        self._fh.write(_KEYLEN.pack(len(raw)))
        self._fh.write(raw)
        self._fh.write(values.tobytes())
        self._count += 1

    def flush(self) -> None:
        self._fh.flush()

    def close(self) -> None:
        if self._fh.closed:
            return
        self._fh.flush()
        self._fh.seek(_COUNT_OFFSET)
        self._fh.write(struct.pack("<Q", self._count))
        self._fh.close()

    def __enter__(self) -> "StoreWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def _read_records(path, *, tolerant: bool):
    path = Path(path)
    data = path.read_bytes()
    if len(data) < _HEADER.size:
        raise FileFormatError(f"{path}: too short for a store header")
    magic, version, dim, count = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise FileFormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FileFormatError(f"{path}: unsupported version {version}")

    records: list[tuple[str, np.ndarray]] = []
    offset = _HEADER.size
    record_bytes = 4 * dim
    while offset < len(data):
        if offset + _KEYLEN.size > len(data):
            if tolerant:
                break
            raise FileFormatError(f"{path}: truncated record at byte {offset}")
        (key_len,) = _KEYLEN.unpack_from(data, offset)
        offset += _KEYLEN.size
        end = offset + key_len + record_bytes
        if end > len(data):
            if tolerant:
                break
            raise FileFormatError(f"{path}: truncated record at byte {offset}")
        try:
            key = data[offset : offset + key_len].decode("utf-8")
        except UnicodeDecodeError:
            if tolerant:
                break
            raise FileFormatError(f"{path}: undecodable key at byte {offset}") from None
        values = np.frombuffer(
            data, dtype="<f4", count=dim, offset=offset + key_len
        ).copy()
        records.append((key, values))
        offset = end

    if not tolerant and len(records) != count:
        raise FileFormatError(
            f"{path}: header promises {count} records, found {len(records)}"
        )
    return dim, records


def _is_sane(values: np.ndarray) -> bool:
    if not np.all(np.isfinite(values)):
        return False
    norm = float(np.linalg.norm(values.astype(np.float64)))
    return abs(norm - 1.0) <= UNIT_NORM_ATOL


def read_partial(path) -> tuple[int, dict[str, np.ndarray]]:
    """Tolerant read for cache warm-up: keeps only intact, sane records.

    Later duplicates win, so a recomputed entry appended after a corrupt
    one takes effect.
    """
    dim, records = _read_records(path, tolerant=True)
    good: dict[str, np.ndarray] = {}
    for key, values in records:
        if _is_sane(values):
            good[key] = values
    return dim, good


class EmbeddingStore(Mapping):
    """Immutable key -> unit vector mapping with a dense float32 matrix."""

    def __init__(self, dim: int, entries: Iterable[tuple[str, np.ndarray]]):
        keys: list[str] = []
        rows: list[np.ndarray] = []
        for key, vec in entries:
            keys.append(key)
            rows.append(np.asarray(vec, dtype=np.float32))
        self._dim = int(dim)
        self._keys = tuple(keys)
        self._matrix = (
            np.vstack(rows) if rows else np.empty((0, self._dim), dtype=np.float32)
        )
        self._row_of = {k: i for i, k in enumerate(self._keys)}

    @property
    def dimension(self) -> int:
        return self._dim

    @property
    def keys_in_order(self) -> tuple[str, ...]:
        return self._keys

    @property
    def matrix(self) -> np.ndarray:
        return self._matrix

    def __getitem__(self, key: str) -> np.ndarray:
        try:
            return self._matrix[self._row_of[key]]
        except KeyError:
            raise MissingEmbeddingError(key) from None

    def vectors(self, keys: Iterable[str]) -> np.ndarray:
        idx = []
        for key in keys:
            if key not in self._row_of:
                raise MissingEmbeddingError(key)
            idx.append(self._row_of[key])
        if not idx:
            return np.empty((0, self._dim), dtype=np.float32)
        return self._matrix[np.asarray(idx)]

    def __contains__(self, key) -> bool:
        return key in self._row_of

    def __iter__(self) -> Iterator[str]:
        return iter(self._keys)

    def __len__(self) -> int:
        return len(self._keys)

    def save(self, path) -> None:
        with StoreWriter(path, self._dim) as writer:
            for key in self._keys:
                writer.add(key, self[key])

    @classmethod
    def load(cls, path) -> "EmbeddingStore":
        dim, records = _read_records(path, tolerant=False)
        return cls(dim, records)
