"""Deterministic synthetic corpora for offline runs and benchmarks.

Each class gets its own vocabulary; a claim is worded from its class's
vocabulary and its reports mix sentences that share that vocabulary with
filler drawn from a common pool (plus the odd distractor worded like a
different class).  Retrieval therefore has a real signal to find, and a
classifier over retrieved evidence can separate the classes — without any
external model or network access.
"""

from __future__ import annotations

import json
import random
from pathlib import Path

from .corpus import SPLITS, resolve_scheme

_BASE_WORDS = (
    "river", "stone", "meadow", "harbor", "lantern", "orchard", "timber",
    "valley", "signal", "anchor", "garden", "summit", "mirror", "canyon",
    "willow", "ember", "quarry", "beacon", "saddle", "thicket", "ridge",
    "current", "hollow", "prairie", "spire", "delta", "grove", "tundra",
    "marsh", "glacier",
)

_SHARED_WORDS = (
    "the", "report", "officials", "said", "according", "sources", "local",
    "news", "statement", "public", "records", "review", "analysis", "media",
    "community", "meeting", "yesterday", "today", "several", "people",
    "city", "state", "agency", "group", "members", "study", "details",
    "response", "update", "account",
)


def class_vocabulary(class_index: int) -> list[str]:
    return [f"{word}{class_index}" for word in _BASE_WORDS]


def _sentence(rng: random.Random, vocab: list[str], n_words: int) -> str:
    words = [rng.choice(vocab) for _ in range(n_words)]
    return " ".join(words)


def make_synthetic_corpus(n_claims: int = 50, scheme="3", seed: int = 7,
                          *, reports_per_claim: int = 2,
                          sentences_per_report: int = 8,
                          split_fractions: tuple[float, float] = (0.6, 0.2),
                          ) -> list[dict]:
    """Generate canonical claim records, balanced across labels and splits.

    Labels rotate round-robin and splits are assigned by position
    (train, then val, then test), so every split stays label-balanced.
    One report per claim is emitted as raw text to exercise segmentation;
    the rest carry pre-segmented sentences.
    """
    scheme = resolve_scheme(scheme)
    rng = random.Random(seed)
    vocabularies = [class_vocabulary(i) for i in range(scheme.n_classes)]

    n_train = int(n_claims * split_fractions[0])
    n_val = int(n_claims * split_fractions[1])

    records: list[dict] = []
    for i in range(n_claims):
        class_index = i % scheme.n_classes
        label = scheme.labels[class_index]
        vocab = vocabularies[class_index]
        split = "train" if i < n_train else ("val" if i < n_train + n_val else "test")

        claim_words = [rng.choice(vocab) for _ in range(6)]
        claim_words.append(rng.choice(_SHARED_WORDS))
        claim_text = " ".join(claim_words)

        reports = []
        for j in range(reports_per_claim):
            sentences: list[str] = []
            for s in range(sentences_per_report):
                if s < 3:  # on-topic evidence
                    mixed = vocab + list(_SHARED_WORDS[:6])
                    sentences.append(_sentence(rng, mixed, rng.randint(6, 9)))
                elif s == 3 and scheme.n_classes > 1:  # distractor
                    other = (class_index + 1 + rng.randrange(scheme.n_classes - 1)) \
                        % scheme.n_classes
                    sentences.append(
                        _sentence(rng, vocabularies[other], rng.randint(6, 9))
                    )
                else:  # filler
                    sentences.append(
                        _sentence(rng, list(_SHARED_WORDS), rng.randint(6, 9))
                    )
            report_id = f"{i}-r{j}"
            if j == 0:
                reports.append({
                    "id": report_id,
                    "text": ". ".join(sentences) + ".",
                })
            else:
                reports.append({"id": report_id, "sentences": sentences})

        records.append({
            "id": f"claim-{i}",
            "text": claim_text,
            "label": label,
            "split": split,
            "reports": reports,
        })
    return records


def write_corpus(records: list[dict], path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for record in records:
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def main(argv=None) -> int:
    import argparse

    parser = argparse.ArgumentParser(
        description="Write a synthetic claim corpus in the canonical format."
    )
    parser.add_argument("--claims", type=int, default=50)
    parser.add_argument("--scheme", choices=["3", "6"], default="3")
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--out", required=True)
    args = parser.parse_args(argv)

    records = make_synthetic_corpus(args.claims, args.scheme, args.seed)
    write_corpus(records, args.out)
    splits = {s: sum(1 for r in records if r["split"] == s) for s in SPLITS}
    print(f"wrote {len(records)} claims to {args.out} (splits: {splits})")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
