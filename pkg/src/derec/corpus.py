"""Claim/report corpora: canonical on-disk format, sentence segmentation,
split statistics and label tallies.

A dataset is a line-delimited JSON file (UTF-8, LF), one claim per line::

    {"id": "...", "text": "...", "label": "...", "split": "train|val|test",
     "reports": [{"id": "...", "sentences": ["...", ...]}
                 | {"id": "...", "text": "raw document text"}]}

Reports given as raw ``text`` are segmented into sentences at ingest;
reports given as ``sentences`` are taken verbatim after trimming (entries
that are empty after trimming are dropped, and interior newlines are
collapsed to single spaces).  Report sentences are not deduplicated:
repeated sentences stay distinct entries, addressable by their position.

Ingestion is single-writer; a completed :class:`Dataset` is immutable and
safe to read from many threads.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping

from .errors import (
    DuplicateClaimIdError,
    MalformedRecordError,
    UnknownLabelError,
    UnknownSplitError,
    ValidationError,
)

SPLITS = ("train", "val", "test")

# Separator for composite addresses.  Claim/report ids are rejected at
# ingest if they contain control characters, so this cannot collide.
_ADDR_SEP = "\x1f"


@dataclass(frozen=True)
class LabelScheme:
    """A closed, ordered set of veracity labels.

    The order is canonical: distributions are reported in it and argmax
    ties resolve to the earliest label.
    """

    name: str
    labels: tuple[str, ...]

    def __contains__(self, label: str) -> bool:
        return label in self.labels

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise UnknownLabelError(label, self.name, self.labels) from None

    @property
    def n_classes(self) -> int:
        return len(self.labels)


THREE_CLASS = LabelScheme("3", ("false", "half-true", "true"))
SIX_CLASS = LabelScheme(
    "6", ("pants-fire", "false", "barely-true", "half-true", "mostly-true", "true")
)
SCHEMES: Mapping[str, LabelScheme] = {"3": THREE_CLASS, "6": SIX_CLASS}


def resolve_scheme(scheme) -> LabelScheme:
    if isinstance(scheme, LabelScheme):
        return scheme
    key = str(scheme)
    if key not in SCHEMES:
        raise ValidationError(f"unknown label scheme {scheme!r}; expected 3 or 6")
    return SCHEMES[key]


@dataclass(frozen=True)
class EvidenceSentence:
    """One segmented sentence, addressable by (claim, report, position)."""

    claim_id: str
    report_id: str
    position: int
    text: str

    @property
    def address(self) -> str:
        return sentence_address(self.claim_id, self.report_id, self.position)


@dataclass(frozen=True)
class Report:
    id: str
    claim_id: str
    sentences: tuple[EvidenceSentence, ...]


@dataclass(frozen=True)
class Claim:
    id: str
    text: str
    label: str
    split: str
    report_ids: tuple[str, ...]


@dataclass(frozen=True)
class DatasetStats:
    split: str
    n_claims: int
    n_reports: int
    n_sentences: int
    avg_sentences_per_claim: float


def claim_address(claim_id: str) -> str:
    return f"claim{_ADDR_SEP}{claim_id}"


def sentence_address(claim_id: str, report_id: str, position: int) -> str:
    return f"sent{_ADDR_SEP}{claim_id}{_ADDR_SEP}{report_id}{_ADDR_SEP}{position}"


@dataclass
class Dataset:
    """An ingested corpus.  Treat as immutable once constructed."""

    scheme: LabelScheme
    claims: tuple[Claim, ...]
    reports_by_claim: Mapping[str, tuple[Report, ...]]
    empty_evidence_claim_ids: frozenset[str] = field(default_factory=frozenset)

    def __post_init__(self):
        self._by_id = {c.id: c for c in self.claims}

    def __len__(self) -> int:
        return len(self.claims)

    def claim(self, claim_id: str) -> Claim:
        try:
            return self._by_id[claim_id]
        except KeyError:
            raise ValidationError(f"unknown claim id {claim_id!r}") from None

    def __contains__(self, claim_id: str) -> bool:
        return claim_id in self._by_id

    def reports(self, claim_id: str) -> tuple[Report, ...]:
        self.claim(claim_id)
        return self.reports_by_claim.get(claim_id, ())

    def sentences(self, claim_id: str) -> list[EvidenceSentence]:
        return [s for r in self.reports(claim_id) for s in r.sentences]

    def iter_sentences(self) -> Iterator[EvidenceSentence]:
        for claim in self.claims:
            for report in self.reports_by_claim.get(claim.id, ()):
                yield from report.sentences

    def claims_in_split(self, split: str) -> list[Claim]:
        if split not in SPLITS:
            raise UnknownSplitError(split)
        return [c for c in self.claims if c.split == split]


# ---------------------------------------------------------------------------
# Sentence segmentation
# ---------------------------------------------------------------------------

# Tokens that end with a period without ending a sentence.  Compared
# lowercased, after stripping the terminal punctuation run.
ABBREVIATIONS = frozenset({
    "mr", "mrs", "ms", "dr", "prof", "st", "jr", "sr", "rev", "gen", "gov",
    "sen", "rep", "no", "vs", "etc", "approx", "dept", "est", "inc", "ltd",
    "co", "fig", "al", "e.g", "i.e", "u.s", "u.k", "a.m", "p.m",
})

_BOUNDARY = re.compile(r"([.!?]+)(\s+)")
_WS_RUN = re.compile(r"\s+")


def _clean(fragment: str) -> str:
    return _WS_RUN.sub(" ", fragment).strip()


def segment(report_text: str) -> list[str]:
    """Split raw report text into sentence strings.

    Splits on a run of terminal punctuation followed by whitespace, unless
    the word ending at the punctuation is a known abbreviation.  Interior
    whitespace (including newlines) is collapsed to single spaces, so joining
    the result with single spaces preserves every non-whitespace character
    of the input.  Degenerate input yields an empty list.
    """
    sentences: list[str] = []
    start = 0
    for match in _BOUNDARY.finditer(report_text):
        candidate = report_text[start : match.end(1)]
        word = candidate.rsplit(None, 1)[-1] if candidate.split() else ""
        word = word.rstrip(".!?").lstrip("\"'([{").lower()
        if word in ABBREVIATIONS:
            continue
        cleaned = _clean(candidate)
        if cleaned:
            sentences.append(cleaned)
        start = match.end()
    tail = _clean(report_text[start:])
    if tail:
        sentences.append(tail)
    return sentences


# ---------------------------------------------------------------------------
# Ingestion
# ---------------------------------------------------------------------------

_RECORD_FIELDS = {"id", "text", "label", "split", "reports"}
_CTRL = re.compile(r"[\x00-\x1f]")


def _require_str(record: dict, key: str, line_no: int) -> str:
    value = record.get(key)
    if not isinstance(value, str) or not value.strip():
        raise MalformedRecordError(line_no, key, "missing or not a non-empty string")
    return value


def _check_identifier(value: str, key: str, line_no: int) -> str:
    if _CTRL.search(value):
        raise MalformedRecordError(line_no, key, "contains control characters")
    return value


def _parse_report(raw, claim_id: str, line_no: int,
                  seen_report_ids: set[str]) -> Report:
    if not isinstance(raw, dict):
        raise MalformedRecordError(line_no, "reports", "report entry is not an object")
    report_id = _check_identifier(_require_str(raw, "id", line_no), "reports.id", line_no)
    if report_id in seen_report_ids:
        raise MalformedRecordError(
            line_no, "reports.id", f"duplicate report id {report_id!r} within claim"
        )
    seen_report_ids.add(report_id)

    if "sentences" in raw:
        entries = raw["sentences"]
        if not isinstance(entries, list) or not all(isinstance(s, str) for s in entries):
            raise MalformedRecordError(
                line_no, "reports.sentences", "must be a list of strings"
            )
        texts = [cleaned for s in entries if (cleaned := _clean(s))]
    elif "text" in raw:
        if not isinstance(raw["text"], str):
            raise MalformedRecordError(line_no, "reports.text", "must be a string")
        texts = segment(raw["text"])
    else:
        raise MalformedRecordError(
            line_no, "reports", "report needs either 'sentences' or 'text'"
        )
    sentences = tuple(
        EvidenceSentence(claim_id=claim_id, report_id=report_id, position=i, text=t)
        for i, t in enumerate(texts)
    )
    return Report(id=report_id, claim_id=claim_id, sentences=sentences)


def ingest(path, scheme) -> Dataset:
    """Read a canonical line-delimited dataset file.

    Claims with zero evidence sentences are retained and flagged in
    ``Dataset.empty_evidence_claim_ids`` so downstream stages can apply
    their documented fallback.
    """
    scheme = resolve_scheme(scheme)
    path = Path(path)

    claims: list[Claim] = []
    reports_by_claim: dict[str, tuple[Report, ...]] = {}
    empty_ids: set[str] = set()
    seen_ids: set[str] = set()

    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedRecordError(line_no, "json", str(exc)) from None
            if not isinstance(record, dict):
                raise MalformedRecordError(line_no, "json", "record is not an object")
            unknown = set(record) - _RECORD_FIELDS
            if unknown:
                raise MalformedRecordError(
                    line_no, sorted(unknown)[0], "unknown field"
                )

            claim_id = _check_identifier(_require_str(record, "id", line_no), "id", line_no)
            if claim_id in seen_ids:
                raise DuplicateClaimIdError(claim_id, line_no)
            seen_ids.add(claim_id)

            text = _require_str(record, "text", line_no)
            label = _require_str(record, "label", line_no)
            if label not in scheme:
                raise UnknownLabelError(label, scheme.name, scheme.labels)
            split = _require_str(record, "split", line_no)
            if split not in SPLITS:
                raise MalformedRecordError(
                    line_no, "split", f"{split!r} is not one of {SPLITS}"
                )

            raw_reports = record.get("reports", [])
            if not isinstance(raw_reports, list):
                raise MalformedRecordError(line_no, "reports", "must be a list")
            seen_report_ids: set[str] = set()
            reports = tuple(
                _parse_report(raw, claim_id, line_no, seen_report_ids)
                for raw in raw_reports
            )

            claims.append(Claim(
                id=claim_id,
                text=text.strip(),
                label=label,
                split=split,
                report_ids=tuple(r.id for r in reports),
            ))
            reports_by_claim[claim_id] = reports
            if not any(r.sentences for r in reports):
                empty_ids.add(claim_id)

    return Dataset(
        scheme=scheme,
        claims=tuple(claims),
        reports_by_claim=reports_by_claim,
        empty_evidence_claim_ids=frozenset(empty_ids),
    )


def save_dataset(dataset: Dataset, path) -> None:
    """Write a dataset back to the canonical format (always segmented)."""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for claim in dataset.claims:
            record = {
                "id": claim.id,
                "text": claim.text,
                "label": claim.label,
                "split": claim.split,
                "reports": [
                    {"id": r.id, "sentences": [s.text for s in r.sentences]}
                    for r in dataset.reports_by_claim.get(claim.id, ())
                ],
            }
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


# ---------------------------------------------------------------------------
# Statistics
# ---------------------------------------------------------------------------

def stats(dataset: Dataset, split: str) -> DatasetStats:
    """Counts over exactly the claims of one split."""
    claims = dataset.claims_in_split(split)
    n_claims = len(claims)
    n_reports = sum(len(dataset.reports_by_claim.get(c.id, ())) for c in claims)
    n_sentences = sum(
        len(r.sentences)
        for c in claims
        for r in dataset.reports_by_claim.get(c.id, ())
    )
    avg = n_sentences / n_claims if n_claims else 0.0
    return DatasetStats(
        split=split,
        n_claims=n_claims,
        n_reports=n_reports,
        n_sentences=n_sentences,
        avg_sentences_per_claim=avg,
    )


def label_distribution(dataset: Dataset) -> dict[str, int]:
    """Claim count per label over the whole dataset; zero-filled."""
    counts = {label: 0 for label in dataset.scheme.labels}
    for claim in dataset.claims:
        counts[claim.label] += 1
    return counts


def render_stats_table(dataset: Dataset, splits=SPLITS) -> str:
    """Human-readable split summary (one column per split)."""
    rows = [stats(dataset, s) for s in splits]
    header = f"{'Metric':<24}" + "".join(f"{s.split:>12}" for s in rows)
    lines = [header, "-" * len(header)]
    lines.append(f"{'Number of Claims':<24}" + "".join(f"{s.n_claims:>12,}" for s in rows))
    lines.append(f"{'Number of Reports':<24}" + "".join(f"{s.n_reports:>12,}" for s in rows))
    lines.append(f"{'Total Sentences':<24}" + "".join(f"{s.n_sentences:>12,}" for s in rows))
    lines.append(
        f"{'Avg Sentences/Claim':<24}"
        + "".join(f"{s.avg_sentences_per_claim:>12.2f}" for s in rows)
    )
    return "\n".join(lines)
