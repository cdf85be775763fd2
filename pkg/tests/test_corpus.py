import json

import pytest
from hypothesis import given, settings, strategies as st

from derec.corpus import (
    SCHEMES,
    SPLITS,
    THREE_CLASS,
    ingest,
    label_distribution,
    render_stats_table,
    save_dataset,
    segment,
    stats,
)
from derec.errors import (
    DuplicateClaimIdError,
    MalformedRecordError,
    UnknownLabelError,
    UnknownSplitError,
)


def write_lines(path, records):
    path.write_text("\n".join(json.dumps(r) for r in records) + "\n",
                    encoding="utf-8")


def record(i, label="true", split="train", reports=None):
    return {
        "id": f"c{i}",
        "text": f"claim number {i}",
        "label": label,
        "split": split,
        "reports": reports if reports is not None else [
            {"id": "r0", "sentences": ["First sentence.", "Second sentence."]},
        ],
    }


class TestSegment:
    def test_terminal_punctuation(self):
        assert segment("A. B? C!") == ["A.", "B?", "C!"]

    def test_empty_input(self):
        assert segment("") == []

    def test_no_terminal_punctuation(self):
        assert segment("no terminal punctuation") == ["no terminal punctuation"]

    def test_abbreviation_guard(self):
        assert segment("Dr. Smith arrived. He left.") == [
            "Dr. Smith arrived.", "He left.",
        ]
        assert segment("Costs rose approx. 4% in May. Then fell.") == [
            "Costs rose approx. 4% in May.", "Then fell.",
        ]

    def test_newlines_collapse(self):
        out = segment("One sentence\nwrapped over lines. Another one.")
        assert out == ["One sentence wrapped over lines.", "Another one."]
        assert all("\n" not in s for s in out)

    def test_punctuation_runs(self):
        # every terminal-punctuation run followed by whitespace is a boundary
        assert segment("Really?! Yes... maybe. Sure") == [
            "Really?!", "Yes...", "maybe.", "Sure",
        ]

    @given(st.text(max_size=300))
    @settings(max_examples=200)
    def test_non_whitespace_preserved(self, text):
        joined = " ".join(segment(text))
        assert "".join(joined.split()) == "".join(text.split())

    @given(st.text(max_size=300))
    @settings(max_examples=200)
    def test_no_blank_sentences(self, text):
        for sentence in segment(text):
            assert sentence.strip() == sentence
            assert sentence
            assert "\n" not in sentence


class TestIngest:
    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("")
        dataset = ingest(path, "3")
        assert len(dataset) == 0
        assert label_distribution(dataset) == {"false": 0, "half-true": 0, "true": 0}

    def test_duplicate_id_named(self, tmp_path):
        path = tmp_path / "dup.jsonl"
        write_lines(path, [record(1), record(2), record(1)])
        with pytest.raises(DuplicateClaimIdError) as excinfo:
            ingest(path, "3")
        assert "c1" in str(excinfo.value)

    def test_malformed_json_reports_line(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text(json.dumps(record(1)) + "\n{not json\n")
        with pytest.raises(MalformedRecordError) as excinfo:
            ingest(path, "3")
        assert excinfo.value.line_no == 2

    def test_missing_field_named(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        bad = record(1)
        del bad["label"]
        write_lines(path, [bad])
        with pytest.raises(MalformedRecordError) as excinfo:
            ingest(path, "3")
        assert excinfo.value.field == "label"

    def test_unknown_label_for_scheme(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        write_lines(path, [record(1, label="pants-fire")])
        with pytest.raises(UnknownLabelError):
            ingest(path, "3")
        # the same record is fine under the six-class scheme
        assert len(ingest(path, "6")) == 1

    def test_bad_split(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        write_lines(path, [record(1, split="dev")])
        with pytest.raises(MalformedRecordError) as excinfo:
            ingest(path, "3")
        assert excinfo.value.field == "split"

    def test_unknown_field_rejected(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        bad = record(1)
        bad["extra"] = True
        write_lines(path, [bad])
        with pytest.raises(MalformedRecordError) as excinfo:
            ingest(path, "3")
        assert excinfo.value.field == "extra"

    def test_zero_evidence_claim_kept_and_flagged(self, tmp_path):
        path = tmp_path / "c.jsonl"
        write_lines(path, [record(1, reports=[]), record(2)])
        dataset = ingest(path, "3")
        assert len(dataset) == 2
        assert dataset.empty_evidence_claim_ids == {"c1"}

    def test_text_reports_are_segmented(self, tmp_path):
        path = tmp_path / "c.jsonl"
        write_lines(path, [record(1, reports=[{"id": "r0", "text": "A. B? C!"}])])
        dataset = ingest(path, "3")
        sentences = dataset.sentences("c1")
        assert [s.text for s in sentences] == ["A.", "B?", "C!"]
        assert [s.position for s in sentences] == [0, 1, 2]

    def test_blank_provided_sentences_dropped(self, tmp_path):
        path = tmp_path / "c.jsonl"
        write_lines(path, [record(
            1, reports=[{"id": "r0", "sentences": ["  ok  ", "   ", "two\nlines"]}]
        )])
        dataset = ingest(path, "3")
        assert [s.text for s in dataset.sentences("c1")] == ["ok", "two lines"]

    def test_duplicate_report_id_within_claim(self, tmp_path):
        path = tmp_path / "c.jsonl"
        write_lines(path, [record(1, reports=[
            {"id": "r0", "sentences": ["A."]},
            {"id": "r0", "sentences": ["B."]},
        ])])
        with pytest.raises(MalformedRecordError):
            ingest(path, "3")

    def test_round_trip_identity(self, small_corpus_path, tmp_path):
        first = ingest(small_corpus_path, "3")
        out = tmp_path / "roundtrip.jsonl"
        save_dataset(first, out)
        second = ingest(out, "3")
        assert first.claims == second.claims
        assert first.reports_by_claim == second.reports_by_claim
        assert first.empty_evidence_claim_ids == second.empty_evidence_claim_ids


class TestStats:
    def test_single_claim_average(self, tmp_path):
        path = tmp_path / "c.jsonl"
        write_lines(path, [record(1, reports=[
            {"id": "r0", "sentences": [f"S{i}." for i in range(5)]},
        ])])
        s = stats(ingest(path, "3"), "train")
        assert s.n_claims == 1
        assert s.n_reports == 1
        assert s.n_sentences == 5
        assert s.avg_sentences_per_claim == 5.0

    def test_average_is_exact_division(self, small_dataset):
        for split in SPLITS:
            s = stats(small_dataset, split)
            if s.n_claims:
                assert s.avg_sentences_per_claim == s.n_sentences / s.n_claims

    def test_unknown_split(self, small_dataset):
        with pytest.raises(UnknownSplitError):
            stats(small_dataset, "dev")

    def test_counts_cover_only_that_split(self, small_dataset):
        total = sum(stats(small_dataset, s).n_claims for s in SPLITS)
        assert total == len(small_dataset)

    def test_label_counts_sum_to_claims(self, small_dataset):
        counts = label_distribution(small_dataset)
        assert sum(counts.values()) == len(small_dataset)
        assert set(counts) == set(THREE_CLASS.labels)

    def test_label_partition_consistent_across_splits(self, small_dataset):
        per_split_totals = {}
        for split in SPLITS:
            claims = small_dataset.claims_in_split(split)
            for claim in claims:
                per_split_totals[claim.label] = per_split_totals.get(claim.label, 0) + 1
        assert per_split_totals == {
            k: v for k, v in label_distribution(small_dataset).items() if v
        }

    def test_render_table_mentions_counts(self, small_dataset):
        table = render_stats_table(small_dataset)
        assert "Number of Claims" in table
        assert "Avg Sentences/Claim" in table


class TestSchemes:
    def test_three_class_set(self):
        assert SCHEMES["3"].labels == ("false", "half-true", "true")

    def test_six_class_set(self):
        assert SCHEMES["6"].labels == (
            "pants-fire", "false", "barely-true", "half-true", "mostly-true", "true"
        )

    def test_label_index_unknown(self):
        with pytest.raises(UnknownLabelError):
            THREE_CLASS.index("mostly-true")
