"""Input validation helpers shared by the estimators and file formats."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import (
    DimensionMismatchError,
    NotNormalizedError,
    ValidationError,
    ZeroVectorError,
)

# Tolerance when accepting externally produced unit vectors.  Vectors we
# normalize ourselves land well inside this (float32 quantization moves the
# norm by ~1e-7); the looser bound admits other well-behaved producers.
UNIT_NORM_ATOL = 1e-5


def as_vector(v, *, name: str = "vector") -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1:
        raise ValidationError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if arr.size == 0:
        raise ValidationError(f"{name} must not be empty")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite values")
    return arr


def as_matrix(X, *, name: str = "X", dtype=np.float32) -> np.ndarray:
    arr = np.asarray(X, dtype=dtype)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ValidationError(f"{name} must be two-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite values")
    return np.ascontiguousarray(arr)


def check_dimension(got: int, expected: int, *, context: str = "") -> None:
    if got != expected:
        raise DimensionMismatchError(expected, got, context)


def check_unit_vector(v: np.ndarray, *, atol: float = UNIT_NORM_ATOL,
                      name: str = "vector") -> None:
    norm = float(np.linalg.norm(np.asarray(v, dtype=np.float64)))
    if norm == 0.0:
        raise ZeroVectorError(name)
    if abs(norm - 1.0) > atol:
        raise NotNormalizedError(name, norm)


def check_unit_rows(X: np.ndarray, *, atol: float = UNIT_NORM_ATOL,
                    names: Sequence[str] | None = None) -> None:
    """Validate every row of ``X`` is unit length, naming the first offender."""
    norms = np.linalg.norm(X.astype(np.float64, copy=False), axis=1)
    bad = np.nonzero(np.abs(norms - 1.0) > atol)[0]
    if bad.size:
        i = int(bad[0])
        name = names[i] if names is not None else f"row {i}"
        if norms[i] == 0.0:
            raise ZeroVectorError(str(name))
        raise NotNormalizedError(str(name), float(norms[i]))


def check_texts(texts, *, name: str = "texts") -> list[str]:
    if not isinstance(texts, (list, tuple)):
        texts = list(texts)
    if len(texts) == 0:
        raise ValidationError(f"{name} must not be empty")
    for i, t in enumerate(texts):
        if not isinstance(t, str):
            raise ValidationError(f"{name}[{i}] is not a string")
        if not t.strip():
            raise ValidationError(f"{name}[{i}] is empty")
    return list(texts)


def check_positive_int(value, *, name: str) -> int:
    if not isinstance(value, int) or isinstance(value, bool) or value < 1:
        raise ValidationError(f"{name} must be a positive integer, got {value!r}")
    return value
