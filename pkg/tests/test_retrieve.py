import json

import numpy as np
import pytest

from derec.corpus import claim_address, ingest
from derec.embed import HashingTextEmbedder, embed_corpus
from derec.errors import MissingEmbeddingError, ValidationError
from derec.retrieve import (
    load_evidence,
    retrieve_all,
    retrieve_evidence,
    save_evidence,
)
from derec.datasets import make_synthetic_corpus, write_corpus


def write_records(path, records):
    path.write_text("\n".join(json.dumps(r) for r in records) + "\n")


def setup_corpus(tmp_path, records, dim=32, seed=0):
    path = tmp_path / "d.jsonl"
    write_records(path, records)
    dataset = ingest(path, "3")
    store = embed_corpus(HashingTextEmbedder(dim=dim, seed=seed), dataset,
                         tmp_path / "cache.drec")
    return dataset, store


def test_verbatim_copy_ranks_first(tmp_path):
    claim_text = "the canal bridge collapsed on tuesday"
    records = [{
        "id": "c0", "text": claim_text, "label": "true", "split": "train",
        "reports": [{"id": "r0", "sentences": [
            "something unrelated happened elsewhere entirely.",
            claim_text,
            "weather stayed calm over the weekend everywhere.",
        ]}],
    }]
    dataset, store = setup_corpus(tmp_path, records)
    ev = retrieve_evidence(dataset, store, "c0", k=2)
    assert ev.items[0].position == 1
    assert ev.items[0].score == pytest.approx(1.0, abs=1e-5)


def test_shortfall_flagged(tmp_path):
    records = [{
        "id": "c0", "text": "four sentence claim", "label": "true",
        "split": "train",
        "reports": [{"id": "r0", "sentences": [f"sentence number {i}." for i in range(4)]}],
    }]
    dataset, store = setup_corpus(tmp_path, records)
    ev = retrieve_evidence(dataset, store, "c0", k=10)
    assert len(ev.items) == 4
    assert ev.shortfall
    assert not ev.empty
    assert ev.k_requested == 10


def test_empty_evidence_flagged_not_error(tmp_path):
    records = [{"id": "c0", "text": "claim with nothing", "label": "true",
                "split": "train", "reports": []}]
    dataset, store = setup_corpus(tmp_path, records)
    ev = retrieve_evidence(dataset, store, "c0", k=10)
    assert ev.items == ()
    assert ev.empty and ev.shortfall


def test_missing_embedding_names_address(tmp_path):
    records = [{"id": "c0", "text": "some claim", "label": "true",
                "split": "train",
                "reports": [{"id": "r0", "sentences": ["a sentence."]}]}]
    path = tmp_path / "d.jsonl"
    write_records(path, records)
    dataset = ingest(path, "3")
    # store embeds a *different* dataset: claim address missing
    other = [{"id": "zz", "text": "other", "label": "true", "split": "train",
              "reports": []}]
    other_path = tmp_path / "o.jsonl"
    write_records(other_path, other)
    store = embed_corpus(HashingTextEmbedder(dim=8), ingest(other_path, "3"),
                         tmp_path / "cache.drec")
    with pytest.raises(MissingEmbeddingError) as excinfo:
        retrieve_evidence(dataset, store, "c0", k=1)
    assert claim_address("c0") in str(excinfo.value)


def test_planted_fixture_matches_exhaustive_scan(tmp_path):
    # 30 sentences; oracle = full scan over the same stored vectors
    rng = np.random.default_rng(11)
    words = [f"w{i}" for i in range(40)]
    sentences = [" ".join(rng.choice(words, size=6)) + "." for _ in range(30)]
    records = [{
        "id": "c0", "text": " ".join(rng.choice(words, size=5)),
        "label": "true", "split": "train",
        "reports": [{"id": "r0", "sentences": sentences}],
    }]
    dataset, store = setup_corpus(tmp_path, records, dim=16, seed=11)

    ev = retrieve_evidence(dataset, store, "c0", k=10)

    claim_vec = store[claim_address("c0")].astype(np.float64)
    scored = []
    for s in dataset.sentences("c0"):
        score = float(store[s.address].astype(np.float64) @ claim_vec)
        scored.append((-score, s.position))
    scored.sort()
    expected = [pos for _, pos in scored[:10]]
    assert [item.position for item in ev.items] == expected


def test_retrieve_all_counts_and_determinism(tmp_path):
    write_corpus(make_synthetic_corpus(200, "3", seed=13), tmp_path / "c.jsonl")
    dataset = ingest(tmp_path / "c.jsonl", "3")
    store = embed_corpus(HashingTextEmbedder(dim=32, seed=1), dataset,
                         tmp_path / "cache.drec")
    first = retrieve_all(dataset, store, k=10)
    assert len(first) == 200
    assert list(first) == [c.id for c in dataset.claims]
    second = retrieve_all(dataset, store, k=10)
    assert first == second


def test_per_claim_scope_containment(tmp_path):
    write_corpus(make_synthetic_corpus(20, "3", seed=3), tmp_path / "c.jsonl")
    dataset = ingest(tmp_path / "c.jsonl", "3")
    store = embed_corpus(HashingTextEmbedder(dim=32, seed=1), dataset,
                         tmp_path / "cache.drec")
    evidence = retrieve_all(dataset, store, k=5, scope="per-claim")
    for claim in dataset.claims:
        own_reports = set(claim.report_ids)
        for item in evidence[claim.id].items:
            assert item.report_id in own_reports


def test_global_scope_crosses_claims(tmp_path):
    target = "unmistakable fingerprint sentence about llamas"
    records = [
        {"id": "a", "text": target, "label": "true", "split": "train",
         "reports": [{"id": "ra", "sentences": ["completely unrelated filler text."]}]},
        {"id": "b", "text": "different topic entirely", "label": "false",
         "split": "train",
         "reports": [{"id": "rb", "sentences": [target, "other filler."]}]},
    ]
    dataset, store = setup_corpus(tmp_path, records)

    per_claim = retrieve_evidence(dataset, store, "a", k=2, scope="per-claim")
    assert all(item.report_id == "ra" for item in per_claim.items)

    global_ev = retrieve_evidence(dataset, store, "a", k=2, scope="global")
    top = global_ev.items[0]
    assert top.report_id == "rb"
    assert top.score == pytest.approx(1.0, abs=1e-5)


def test_k_changes_size_not_relative_order(tmp_path):
    write_corpus(make_synthetic_corpus(6, "3", seed=5), tmp_path / "c.jsonl")
    dataset = ingest(tmp_path / "c.jsonl", "3")
    store = embed_corpus(HashingTextEmbedder(dim=32, seed=1), dataset,
                         tmp_path / "cache.drec")
    for claim in dataset.claims:
        small = retrieve_evidence(dataset, store, claim.id, k=5).items
        large = retrieve_evidence(dataset, store, claim.id, k=10).items
        assert list(large[:len(small)]) == list(small)


def test_bad_scope_and_bad_k(tmp_path, small_dataset):
    store = embed_corpus(HashingTextEmbedder(dim=8), small_dataset,
                         tmp_path / "cache.drec")
    with pytest.raises(ValidationError):
        retrieve_evidence(small_dataset, store, small_dataset.claims[0].id,
                          k=5, scope="everywhere")
    with pytest.raises(ValidationError):
        retrieve_all(small_dataset, store, k=0)


def test_evidence_file_round_trip(tmp_path):
    write_corpus(make_synthetic_corpus(8, "3", seed=2), tmp_path / "c.jsonl")
    dataset = ingest(tmp_path / "c.jsonl", "3")
    store = embed_corpus(HashingTextEmbedder(dim=16, seed=0), dataset,
                         tmp_path / "cache.drec")
    sets = retrieve_all(dataset, store, k=4)
    out = tmp_path / "evidence.jsonl"
    save_evidence(sets, out)

    loaded = load_evidence(out)
    assert set(loaded) == set(sets)
    for claim_id, ev in sets.items():
        assert loaded[claim_id] == list(ev.items)

    # pinned file shape: claim_id + evidence objects with exactly these keys
    first = json.loads(out.read_text().splitlines()[0])
    assert set(first) == {"claim_id", "evidence"}
    if first["evidence"]:
        assert set(first["evidence"][0]) == {"report_id", "position", "score", "text"}
