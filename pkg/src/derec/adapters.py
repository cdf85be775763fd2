"""Best-effort converters from published corpus layouts to the canonical
line-delimited format.

Two layouts are recognized:

* per-claim JSON files under ``train/``, ``val/`` and ``test/`` directories
  (the three-label Snopes-derived corpus ships this way);
* single ``train.json`` / ``val.json`` / ``test.json`` array files (the
  six-label corpus ships this way).

Each claim object is expected to carry ``event_id``/``id``, ``claim``,
``label`` and a ``reports`` list whose entries have ``content`` (raw text)
and/or ``tokenized`` (pre-segmented ``{"sent": ...}`` objects).  Anything
missing is skipped with a counter rather than a hard failure: these layouts
were never formally specified, so conversion is best-effort by design.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .corpus import SPLITS, resolve_scheme
from .errors import ValidationError

# The three-class corpus names its middle label "half" in some files and
# "half-true" in others; one canonical name per class.
_LABEL_ALIASES = {
    "half": "half-true",
    "mostly true": "mostly-true",
    "barely true": "barely-true",
    "pants on fire": "pants-fire",
    "pants-on-fire": "pants-fire",
}


@dataclass
class ConversionSummary:
    n_claims: int = 0
    n_reports: int = 0
    n_skipped: int = 0


def normalize_label(raw: str) -> str:
    label = raw.strip().lower()
    return _LABEL_ALIASES.get(label, label)


def _claim_record(obj: dict, split: str, scheme) -> dict | None:
    claim_id = obj.get("event_id") or obj.get("id")
    text = obj.get("claim") or obj.get("text")
    raw_label = obj.get("label")
    if not claim_id or not isinstance(text, str) or not isinstance(raw_label, str):
        return None
    label = normalize_label(raw_label)
    if label not in scheme:
        return None

    reports = []
    for i, rep in enumerate(obj.get("reports") or []):
        if not isinstance(rep, dict):
            continue
        report_id = str(rep.get("report_id") or rep.get("id") or f"r{i}")
        tokenized = rep.get("tokenized")
        if isinstance(tokenized, list) and tokenized:
            sentences = [
                t["sent"] for t in tokenized
                if isinstance(t, dict) and isinstance(t.get("sent"), str)
            ]
            if sentences:
                reports.append({"id": report_id, "sentences": sentences})
                continue
        content = rep.get("content")
        if isinstance(content, str) and content.strip():
            reports.append({"id": report_id, "text": content})

    return {
        "id": str(claim_id),
        "text": text,
        "label": label,
        "split": split,
        "reports": reports,
    }


def _iter_split_objects(root: Path, split: str):
    split_dir = root / split
    if split_dir.is_dir():
        for file in sorted(split_dir.glob("*.json")):
            with file.open("r", encoding="utf-8") as fh:
                yield json.load(fh)
        return
    split_file = root / f"{split}.json"
    if split_file.is_file():
        with split_file.open("r", encoding="utf-8") as fh:
            data = json.load(fh)
        if not isinstance(data, list):
            raise ValidationError(f"{split_file} does not contain a JSON array")
        yield from data
        return
    raise ValidationError(f"no {split!r} split found under {root}")


def convert_corpus(root, scheme, out_path) -> ConversionSummary:
    """Convert a published-layout corpus directory to canonical JSONL."""
    root = Path(root)
    scheme = resolve_scheme(scheme)
    summary = ConversionSummary()
    with Path(out_path).open("w", encoding="utf-8", newline="\n") as out:
        for split in SPLITS:
            for obj in _iter_split_objects(root, split):
                record = _claim_record(obj, split, scheme) if isinstance(obj, dict) else None
                if record is None:
                    summary.n_skipped += 1
                    continue
                summary.n_claims += 1
                summary.n_reports += len(record["reports"])
                out.write(json.dumps(record, ensure_ascii=False) + "\n")
    return summary
