"""Top-k evidence retrieval: match each claim's vector against its report
sentences (or, behind a flag, the whole corpus) and keep the k best.

Per-claim scope is the default: the candidate pool for a claim is exactly
the sentences of its own reports, and the flat index over them is built on
the fly (pools are small, so persisting per-claim indexes would cost more
than rebuilding them).  Global scope searches one index over every
sentence in the dataset and is intended for ablation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .corpus import Dataset, claim_address
from .errors import ValidationError
from .index import ClusteredIndex, FlatIndex, build_index
from .store import EmbeddingStore
from .validation import check_positive_int

SCOPES = ("per-claim", "global")


@dataclass(frozen=True)
class EvidenceItem:
    report_id: str
    position: int
    score: float
    text: str


@dataclass(frozen=True)
class EvidenceSet:
    """Ranked evidence for one claim.

    ``shortfall`` marks fewer than ``k_requested`` candidates existing;
    ``empty`` marks a claim with no evidence sentences at all (kept so the
    classifier stage can apply its evidence-absent handling instead of the
    claim silently vanishing from the evaluation).
    """

    claim_id: str
    items: tuple[EvidenceItem, ...]
    k_requested: int
    scope: str
    shortfall: bool
    empty: bool


def _sentence_lookup(dataset: Dataset):
    return {
        s.address: s for s in dataset.iter_sentences()
    }


def _search_pool(index, claim_vec, k: int, lookup, scope: str,
                 claim_id: str) -> EvidenceSet:
    results = index.search(claim_vec, k)
    items = tuple(
        EvidenceItem(
            report_id=lookup[r.key].report_id,
            position=lookup[r.key].position,
            score=r.score,
            text=lookup[r.key].text,
        )
        for r in results
    )
    return EvidenceSet(
        claim_id=claim_id,
        items=items,
        k_requested=k,
        scope=scope,
        shortfall=len(items) < k,
        empty=len(items) == 0,
    )


def retrieve_evidence(dataset: Dataset, store: EmbeddingStore, claim_id: str,
                      k: int = 10, scope: str = "per-claim",
                      global_index=None, _lookup=None) -> EvidenceSet:
    """Top-k evidence for one claim by cosine similarity.

    A claim with zero sentences yields an empty, flagged set — not an
    error.  Missing embeddings are fatal and name the offending address.
    """
    check_positive_int(k, name="k")
    if scope not in SCOPES:
        raise ValidationError(f"unknown scope {scope!r}; expected one of {SCOPES}")
    claim = dataset.claim(claim_id)
    claim_vec = store[claim_address(claim.id)]

    if scope == "global":
        if global_index is None:
            global_index = build_global_index(dataset, store)
        lookup = _lookup if _lookup is not None else _sentence_lookup(dataset)
        return _search_pool(global_index, claim_vec, k, lookup, scope, claim_id)

    sentences = dataset.sentences(claim_id)
    if not sentences:
        return EvidenceSet(
            claim_id=claim_id, items=(), k_requested=k, scope=scope,
            shortfall=True, empty=True,
        )
    entries = [(s.address, store[s.address]) for s in sentences]
    index = build_index(entries, kind="flat")
    lookup = {s.address: s for s in sentences}
    return _search_pool(index, claim_vec, k, lookup, scope, claim_id)


def build_global_index(dataset: Dataset, store: EmbeddingStore,
                       kind: str = "flat", **params) -> FlatIndex | ClusteredIndex:
    entries = [(s.address, store[s.address]) for s in dataset.iter_sentences()]
    return build_index(entries, kind=kind, dim=store.dimension, **params)


def retrieve_all(dataset: Dataset, store: EmbeddingStore, k: int = 10,
                 scope: str = "per-claim",
                 index_kind: str = "flat") -> dict[str, EvidenceSet]:
    """One evidence set per claim, in claim order (deterministic)."""
    check_positive_int(k, name="k")
    global_index = None
    lookup = None
    if scope == "global":
        global_index = build_global_index(dataset, store, kind=index_kind)
        lookup = _sentence_lookup(dataset)
    out: dict[str, EvidenceSet] = {}
    for claim in dataset.claims:
        out[claim.id] = retrieve_evidence(
            dataset, store, claim.id, k=k, scope=scope,
            global_index=global_index, _lookup=lookup,
        )
    return out


# ---------------------------------------------------------------------------
# Evidence file (one JSON object per claim)
# ---------------------------------------------------------------------------

def save_evidence(evidence: dict[str, EvidenceSet], path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for claim_id, ev in evidence.items():
            record = {
                "claim_id": claim_id,
                "evidence": [
                    {
                        "report_id": item.report_id,
                        "position": item.position,
                        "score": item.score,
                        "text": item.text,
                    }
                    for item in ev.items
                ],
            }
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def load_evidence(path) -> dict[str, list[EvidenceItem]]:
    out: dict[str, list[EvidenceItem]] = {}
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            record = json.loads(line)
            out[record["claim_id"]] = [
                EvidenceItem(
                    report_id=e["report_id"],
                    position=int(e["position"]),
                    score=float(e["score"]),
                    text=e["text"],
                )
                for e in record["evidence"]
            ]
    return out
