"""Veracity prediction: classifier inputs, pooled features, and the
trainable softmax head.

Two classifier routes share one prediction surface:

* :class:`SoftmaxHead` — a linear softmax classifier over pooled embedding
  features, trained here by mini-batch gradient descent on cross-entropy.
  Small enough to train at a desk, with every numerical property testable.
* :class:`RemoteClassifier` — a client for a fine-tuned encoder service
  speaking ``POST {"claim": ..., "evidence": [...], "scheme": "3"|"6"}`` ->
  ``{"distribution": [...], "label": "..."}``.

The input sequence places the claim first and the retrieved evidence in
rank order, each segment delimited by separator markers; when the sequence
exceeds the length budget, whole evidence items are dropped from the tail
(a truncated sentence would corrupt its meaning).
"""

from __future__ import annotations

import hashlib
import json
import struct
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import requests
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .corpus import LabelScheme, resolve_scheme
from .errors import (
    DerecError,
    DimensionMismatchError,
    FileFormatError,
    ProviderError,
    ProviderUnreachableError,
    ValidationError,
)
from .retrieve import EvidenceItem
from .validation import as_matrix

CLS_MARKER = "[CLS]"
SEP_MARKER = "[SEP]"

# How pooled features are laid out; recorded in the training-config digest.
FEATURE_SPEC = "concat(claim, score_weighted_evidence_mean, claim*evidence_mean)"


# ---------------------------------------------------------------------------
# Input construction
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ClassifierInput:
    claim_id: str
    claim_text: str
    evidence_texts: tuple[str, ...]
    truncated: bool
    evidence_absent: bool

    def sequence(self) -> str:
        parts = [CLS_MARKER, self.claim_text, SEP_MARKER]
        for text in self.evidence_texts:
            parts.append(text)
            parts.append(SEP_MARKER)
        return " ".join(parts)


def _units(text: str) -> int:
    return len(text.split())


def build_input(claim_id: str, claim_text: str,
                evidence: Sequence[EvidenceItem | str],
                max_len: int = 512) -> ClassifierInput:
    """Assemble the claim-first, rank-ordered classifier sequence.

    ``max_len`` is a whitespace-token budget over the serialized sequence,
    marker tokens included.  Evidence items are dropped whole from the tail
    until the budget holds; the claim itself is never cut.
    """
    texts = [e.text if isinstance(e, EvidenceItem) else e for e in evidence]
    kept: list[str] = []
    total = 2 + _units(claim_text)  # [CLS] claim [SEP]
    truncated = False
    for text in texts:
        cost = _units(text) + 1  # the item plus its trailing [SEP]
        if total + cost > max_len:
            truncated = True
            break
        kept.append(text)
        total += cost
    return ClassifierInput(
        claim_id=claim_id,
        claim_text=claim_text,
        evidence_texts=tuple(kept),
        truncated=truncated,
        evidence_absent=len(texts) == 0,
    )


# ---------------------------------------------------------------------------
# Feature pooling
# ---------------------------------------------------------------------------

def pool_features(claim_vec: np.ndarray, evidence_vecs: np.ndarray | None,
                  scores: Sequence[float] | None) -> np.ndarray:
    """Pool claim and evidence vectors into one feature vector of size 3d:
    the claim vector, the score-weighted mean of the evidence vectors, and
    their elementwise product.  Empty evidence contributes zeros."""
    claim64 = np.asarray(claim_vec, dtype=np.float64)
    d = claim64.shape[0]
    if evidence_vecs is None or len(evidence_vecs) == 0:
        mean = np.zeros(d)
    else:
        ev = np.asarray(evidence_vecs, dtype=np.float64)
        if ev.ndim != 2 or ev.shape[1] != d:
            raise DimensionMismatchError(d, ev.shape[-1], "evidence vectors")
        w = np.asarray(scores, dtype=np.float64)
        if w.shape[0] != ev.shape[0]:
            raise ValidationError(
                f"{w.shape[0]} scores for {ev.shape[0]} evidence vectors"
            )
        total = float(w.sum())
        if abs(total) < 1e-12:
            # Scores that cancel out carry no usable weighting.
            w = np.full(ev.shape[0], 1.0 / ev.shape[0])
        else:
            w = w / total
        mean = w @ ev
    return np.concatenate([claim64, mean, claim64 * mean])


# ---------------------------------------------------------------------------
# Softmax head
# ---------------------------------------------------------------------------

def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax, shifted for stability."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def cross_entropy_loss(W: np.ndarray, b: np.ndarray, X: np.ndarray,
                       Y: np.ndarray, l2: float = 0.0) -> float:
    """Mean cross-entropy of softmax(X Wᵀ + b) against one-hot Y, plus an
    optional L2 penalty on W."""
    probs = softmax(X @ W.T + b)
    eps = 1e-300  # guards log(0); irrelevant at working precision
    ce = -np.mean(np.sum(Y * np.log(probs + eps), axis=1))
    return float(ce + 0.5 * l2 * np.sum(W * W))


def cross_entropy_grad(W: np.ndarray, b: np.ndarray, X: np.ndarray,
                       Y: np.ndarray, l2: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Analytic gradient of :func:`cross_entropy_loss` w.r.t. W and b."""
    m = X.shape[0]
    delta = softmax(X @ W.T + b) - Y  # (m, c)
    grad_W = delta.T @ X / m + l2 * W
    grad_b = delta.sum(axis=0) / m
    return grad_W, grad_b


@dataclass(frozen=True)
class VeracityPrediction:
    claim_id: str
    distribution: tuple[float, ...]  # scheme label order
    predicted: str


class SoftmaxHead(ClassifierMixin, BaseEstimator):
    """Linear softmax classifier trained by seeded mini-batch gradient
    descent.

    Weights start at zero (so an untrained head emits uniform
    distributions), batches are drawn in a seed-determined order, and all
    arithmetic is float64 — the same data, seed and hyperparameters always
    reproduce bit-identical weights.

    ``scheme`` is "3" or "6" for the built-in label schemes, or an explicit
    ordered sequence of class labels; the order fixes both the distribution
    layout and the argmax tie rule.
    """

    def __init__(self, scheme="3", learning_rate: float = 0.1,
                 epochs: int = 200, batch_size: int = 32, l2: float = 0.0,
                 seed: int = 0):
        self.scheme = scheme
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.l2 = l2
        self.seed = seed

    def _scheme(self) -> LabelScheme:
        if isinstance(self.scheme, LabelScheme):
            return self.scheme
        if isinstance(self.scheme, str):
            return resolve_scheme(self.scheme)
        return LabelScheme("custom", tuple(str(label) for label in self.scheme))

    def fit(self, X, y):
        scheme = self._scheme()
        X = as_matrix(X, name="features", dtype=np.float64)
        labels = [str(v) for v in y]
        if len(labels) != X.shape[0]:
            raise ValidationError(f"{len(labels)} labels for {X.shape[0]} rows")
        idx = np.array([scheme.index(label) for label in labels])
        present = set(idx.tolist())
        missing = [l for i, l in enumerate(scheme.labels) if i not in present]
        if missing:
            raise ValidationError(
                f"training data has no examples for label(s) {missing}"
            )

        n, d = X.shape
        c = scheme.n_classes
        Y = np.zeros((n, c))
        Y[np.arange(n), idx] = 1.0

        W = np.zeros((c, d))
        b = np.zeros(c)
        self.initial_loss_ = cross_entropy_loss(W, b, X, Y, self.l2)

        rng = np.random.default_rng(self.seed)
        batch = max(1, int(self.batch_size))
        for epoch in range(int(self.epochs)):
            order = rng.permutation(n)
            for start in range(0, n, batch):
                rows = order[start : start + batch]
                grad_W, grad_b = cross_entropy_grad(W, b, X[rows], Y[rows], self.l2)
                W -= self.learning_rate * grad_W
                b -= self.learning_rate * grad_b
                if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
                    raise DerecError(
                        f"non-finite parameters at epoch {epoch}, "
                        f"batch starting at row {start}"
                    )

        self.final_loss_ = cross_entropy_loss(W, b, X, Y, self.l2)
        if not np.isfinite(self.final_loss_):
            raise DerecError(f"non-finite loss after epoch {self.epochs - 1}")
        self.W_ = W
        self.b_ = b
        self.classes_ = np.asarray(scheme.labels, dtype=object)
        self.n_features_in_ = d
        return self

    def _check_features(self, X) -> np.ndarray:
        check_is_fitted(self, "W_")
        X = as_matrix(X, name="features", dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise DimensionMismatchError(self.n_features_in_, X.shape[1], "features")
        return X

    def decision_function(self, X) -> np.ndarray:
        X = self._check_features(X)
        return X @ self.W_.T + self.b_

    def predict_proba(self, X) -> np.ndarray:
        return softmax(self.decision_function(X))

    def predict(self, X) -> np.ndarray:
        probs = self.predict_proba(X)
        # argmax takes the first maximum: ties resolve to scheme order
        return self.classes_[np.argmax(probs, axis=1)]

    def predictions(self, X, claim_ids: Sequence[str]) -> list[VeracityPrediction]:
        probs = self.predict_proba(X)
        scheme = self._scheme()
        return [
            VeracityPrediction(
                claim_id=cid,
                distribution=tuple(float(p) for p in row),
                predicted=scheme.labels[int(np.argmax(row))],
            )
            for cid, row in zip(claim_ids, probs)
        ]


# ---------------------------------------------------------------------------
# Model file
# ---------------------------------------------------------------------------

MODEL_MAGIC = b"DRHD"
MODEL_VERSION = 1


def training_config_digest(config: dict) -> bytes:
    payload = json.dumps(config, sort_keys=True).encode("utf-8")
    return hashlib.sha256(payload).digest()


def save_model(model: SoftmaxHead, path, *, config: dict | None = None) -> None:
    check_is_fitted(model, "W_")
    scheme = model._scheme()
    if scheme.name not in ("3", "6"):
        raise ValidationError(
            "only models over the 3- or 6-class scheme can be serialized"
        )
    c, d = model.W_.shape
    digest = training_config_digest(config or model.get_params())
    with Path(path).open("wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<IBI", MODEL_VERSION, scheme.n_classes, d))
        fh.write(model.W_.astype("<f8").tobytes())  # row-major c x d
        fh.write(model.b_.astype("<f8").tobytes())
        fh.write(struct.pack("<q", int(model.seed)))
        fh.write(digest)


def load_model(path) -> SoftmaxHead:
    data = Path(path).read_bytes()
    head = struct.calcsize("<4sIBI")
    if len(data) < head:
        raise FileFormatError(f"{path}: too short to be a model file")
    magic, version, n_classes, d = struct.unpack_from("<4sIBI", data, 0)
    if magic != MODEL_MAGIC:
        raise FileFormatError(f"{path}: bad magic {magic!r}")
    if version != MODEL_VERSION:
        raise FileFormatError(f"{path}: unsupported version {version}")
    scheme = {3: "3", 6: "6"}.get(n_classes)
    if scheme is None:
        raise FileFormatError(f"{path}: unsupported class count {n_classes}")

    expected = head + 8 * (n_classes * d + n_classes) + 8 + 32
    if len(data) != expected:
        raise FileFormatError(f"{path}: expected {expected} bytes, got {len(data)}")
    offset = head
    W = np.frombuffer(data, dtype="<f8", count=n_classes * d,
                      offset=offset).reshape(n_classes, d).copy()
    offset += 8 * n_classes * d
    b = np.frombuffer(data, dtype="<f8", count=n_classes, offset=offset).copy()
    offset += 8 * n_classes
    (seed,) = struct.unpack_from("<q", data, offset)
    offset += 8
    digest = data[offset : offset + 32]

    model = SoftmaxHead(scheme=scheme, seed=int(seed))
    model.W_ = W
    model.b_ = b
    model.classes_ = np.asarray(resolve_scheme(scheme).labels, dtype=object)
    model.n_features_in_ = d
    model.config_digest_ = digest
    return model


# ---------------------------------------------------------------------------
# Remote classifier
# ---------------------------------------------------------------------------

class RemoteClassifier:
    """Client for a remote veracity classifier.

    The response's ``distribution`` is taken as probabilities when it sums
    to one, and as raw logits (softmaxed here) otherwise, so both kinds of
    service plug in.  The predicted label is derived from the distribution
    argmax, keeping the tie rule consistent with the local head.
    """

    def __init__(self, endpoint: str, scheme, *, timeout: float = 30.0,
                 retries: int = 2, backoff: float = 0.2, session=None):
        self.endpoint = endpoint
        self.scheme = resolve_scheme(scheme)
        self.timeout = timeout
        self.retries = max(0, int(retries))
        self.backoff = backoff
        self._session = session or requests.Session()

    def _post(self, payload: dict) -> dict:
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
                        f"server error {response.status_code}"
                    )
                elif response.status_code >= 400:
                    raise ProviderError(
                        f"request rejected ({response.status_code}): "
                        f"{response.text[:200]}"
                    )
                else:
                    return response.json()
            if attempt < self.retries:
                time.sleep(self.backoff * (attempt + 1))
        raise ProviderUnreachableError(
            f"classifier at {self.endpoint} unreachable after "
            f"{self.retries + 1} attempts: {last_error}"
        )

    def predict_one(self, item: ClassifierInput) -> VeracityPrediction:
        body = self._post({
            "claim": item.claim_text,
            "evidence": list(item.evidence_texts),
            "scheme": self.scheme.name,
        })
        values = body.get("distribution")
        if not isinstance(values, list) or len(values) != self.scheme.n_classes:
            raise ProviderError(
                f"classifier returned {values!r}; expected "
                f"{self.scheme.n_classes} values"
            )
        arr = np.asarray(values, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise ProviderError("classifier returned non-finite values")
        if abs(float(arr.sum()) - 1.0) > 1e-3 or np.any(arr < 0):
            arr = softmax(arr)
        else:
            arr = arr / arr.sum()
        return VeracityPrediction(
            claim_id=item.claim_id,
            distribution=tuple(float(p) for p in arr),
            predicted=self.scheme.labels[int(np.argmax(arr))],
        )

    def predict(self, items: Sequence[ClassifierInput]) -> list[VeracityPrediction]:
        return [self.predict_one(item) for item in items]


# ---------------------------------------------------------------------------
# Predictions file
# ---------------------------------------------------------------------------

def save_predictions(predictions: Sequence[VeracityPrediction], path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for p in predictions:
            fh.write(json.dumps({
                "claim_id": p.claim_id,
                "label": p.predicted,
                "distribution": list(p.distribution),
            }, ensure_ascii=False) + "\n")


def load_predictions(path) -> list[VeracityPrediction]:
    out: list[VeracityPrediction] = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            record = json.loads(line)
            out.append(VeracityPrediction(
                claim_id=record["claim_id"],
                distribution=tuple(record.get("distribution", ())),
                predicted=record["label"],
            ))
    return out
