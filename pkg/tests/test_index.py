import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from derec.errors import (
    DuplicateKeyError,
    DimensionMismatchError,
    FileFormatError,
    NotNormalizedError,
    ValidationError,
)
from derec.evaluate import topical_unit_vectors
from derec.index import (
    ClusteredIndex,
    FlatIndex,
    brute_force_topk,
    build_index,
    load_index,
    save_index,
)

from conftest import unit_rows


def entries_of(X):
    return [(str(i), X[i]) for i in range(X.shape[0])]


def python_topk(X, q, k):
    """Second, numpy-free oracle: fsum inner products + tuple sort."""
    scored = []
    for i in range(X.shape[0]):
        score = math.fsum(float(a) * float(b) for a, b in zip(X[i], q))
        scored.append((-score, i))
    scored.sort()
    return [str(i) for _, i in scored[:k]]


class TestBuild:
    def test_flat_count(self):
        X = unit_rows(5, 8)
        index = FlatIndex().fit(X)
        assert len(index) == 5
        assert index.dimension == 8

    def test_unnormalized_rejected(self):
        X = unit_rows(3, 8).copy()
        X[1] *= 0.5
        with pytest.raises(NotNormalizedError) as excinfo:
            FlatIndex().fit(X, keys=["a", "b", "c"])
        assert "b" in str(excinfo.value)

    def test_duplicate_key_rejected(self):
        X = unit_rows(2, 4)
        with pytest.raises(DuplicateKeyError):
            FlatIndex().fit(X, keys=["same", "same"])

    def test_clustered_partition(self):
        X = unit_rows(1000, 16, seed=2)
        index = ClusteredIndex(n_clusters=16, seed=0).fit(X)
        assert index.assignments_.shape == (1000,)
        assert set(index.assignments_.tolist()) <= set(range(16))
        # every entry in exactly one cluster; union covers everything
        counts = np.bincount(index.assignments_, minlength=16)
        assert counts.sum() == 1000
        union = np.concatenate(index._members)
        assert sorted(union.tolist()) == list(range(1000))

    def test_clustered_more_clusters_than_points(self):
        X = unit_rows(5, 8)
        index = ClusteredIndex(n_clusters=32, seed=0).fit(X)
        assert index.centroids_.shape[0] == 5
        assert len(index.search(X[0].astype(np.float64), 3)) == 3


class TestSearch:
    def test_self_similarity_rank_one(self):
        X = unit_rows(20, 16, seed=1)
        index = FlatIndex().fit(X)
        results = index.search(X[7].astype(np.float64), 3)
        assert results[0].key == "7"
        assert results[0].rank == 1
        assert abs(results[0].score - 1.0) <= 1e-5

    def test_orthogonal_scores(self):
        X = np.array([[1.0, 0.0], [0.0, 1.0]], dtype=np.float32)
        index = FlatIndex().fit(X)
        results = index.search(np.array([1.0, 0.0]), 2)
        assert [r.key for r in results] == ["0", "1"]
        assert results[0].score == pytest.approx(1.0, abs=1e-6)
        assert results[1].score == pytest.approx(0.0, abs=1e-6)

    def test_k_zero_rejected(self):
        index = FlatIndex().fit(unit_rows(3, 4))
        with pytest.raises(ValidationError):
            index.search(np.array([1.0, 0, 0, 0]), 0)

    def test_dimension_mismatch(self):
        index = FlatIndex().fit(unit_rows(3, 4))
        with pytest.raises(DimensionMismatchError):
            index.search(np.array([1.0, 0.0]), 1)

    def test_unnormalized_query_rejected(self):
        index = FlatIndex().fit(unit_rows(3, 4))
        with pytest.raises(NotNormalizedError):
            index.search(np.array([2.0, 0, 0, 0]), 1)

    def test_k_clamps_to_count(self):
        X = unit_rows(4, 8)
        index = FlatIndex().fit(X)
        results = index.search(X[0].astype(np.float64), 10)
        assert len(results) == 4
        assert [r.rank for r in results] == [1, 2, 3, 4]

    def test_matches_oracle_seed7(self):
        rng = np.random.default_rng(7)
        X = rng.standard_normal((200, 16))
        X /= np.linalg.norm(X, axis=1, keepdims=True)
        X = X.astype(np.float32)
        q = rng.standard_normal(16)
        q /= np.linalg.norm(q)

        flat = [(r.key, r.rank) for r in FlatIndex().fit(X).search(q, 10)]
        oracle = [(r.key, r.rank) for r in brute_force_topk(entries_of(X), q, 10)]
        assert flat == oracle
        # and both agree with a numpy-free scan
        assert [k for k, _ in flat] == python_topk(X, q, 10)

    def test_scores_are_float64_accumulated(self):
        # a case where float32 accumulation visibly drifts: many equal
        # components whose product sums build up rounding error
        d = 1024
        v = np.full(d, 1.0 / math.sqrt(d), dtype=np.float32)
        index = FlatIndex().fit(v.reshape(1, -1))
        q = v.astype(np.float64) / np.linalg.norm(v.astype(np.float64))
        score = index.search(q, 1)[0].score
        exact = math.fsum(float(a) * float(b) for a, b in zip(v, q))
        assert abs(score - exact) < 1e-12


class TestBruteForce:
    def test_singleton(self):
        X = unit_rows(1, 4)
        results = brute_force_topk(entries_of(X), X[0].astype(np.float64), 1)
        assert [r.key for r in results] == ["0"]

    def test_k_larger_than_corpus(self):
        X = unit_rows(3, 4)
        results = brute_force_topk(entries_of(X), X[0].astype(np.float64), 10)
        assert len(results) == 3
        scores = [r.score for r in results]
        assert scores == sorted(scores, reverse=True)

    def test_tie_broken_by_insertion_order(self):
        base = unit_rows(3, 8, seed=4)
        X = np.vstack([base[0], base[1], base[0]])  # rows 0 and 2 identical
        q = base[0].astype(np.float64)
        q /= np.linalg.norm(q)
        results = brute_force_topk(entries_of(X), q, 3)
        assert [r.key for r in results][:2] == ["0", "2"]
        flat = FlatIndex().fit(X).search(q, 3)
        assert [r.key for r in flat][:2] == ["0", "2"]

    def test_empty_corpus(self):
        assert brute_force_topk([], np.array([1.0, 0.0]), 5) == []


@st.composite
def corpus_and_query(draw):
    dim = draw(st.sampled_from([2, 4, 8, 16]))
    n = draw(st.integers(min_value=1, max_value=120))
    seed = draw(st.integers(min_value=0, max_value=2**31))
    k = draw(st.integers(min_value=1, max_value=15))
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, dim))
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    q = rng.standard_normal(dim)
    q /= np.linalg.norm(q)
    return X.astype(np.float32), q, k


class TestProperties:
    @given(corpus_and_query())
    @settings(max_examples=120, deadline=None)
    def test_flat_equals_oracle(self, data):
        X, q, k = data
        flat = FlatIndex().fit(X).search(q, k)
        oracle = brute_force_topk(entries_of(X), q, k)
        assert [(r.key, r.rank) for r in flat] == [(r.key, r.rank) for r in oracle]

    @given(corpus_and_query())
    @settings(max_examples=60, deadline=None)
    def test_scores_bounded_and_monotone(self, data):
        X, q, k = data
        results = FlatIndex().fit(X).search(q, k)
        scores = [r.score for r in results]
        assert all(-1 - 1e-5 <= s <= 1 + 1e-5 for s in scores)
        assert all(a >= b for a, b in zip(scores, scores[1:]))

    @given(corpus_and_query())
    @settings(max_examples=30, deadline=None)
    def test_search_is_deterministic(self, data):
        X, q, k = data
        a = FlatIndex().fit(X).search(q, k)
        b = FlatIndex().fit(X).search(q, k)
        assert a == b

    def test_clustered_probe_all_is_exact(self):
        X, Q = topical_unit_vectors(400, 10, 16, seed=9)
        index = ClusteredIndex(n_clusters=8, n_probe=8, seed=1).fit(X)
        for q in Q.astype(np.float64):
            approx = [(r.key, r.rank) for r in index.search(q, 7)]
            exact = [(r.key, r.rank) for r in brute_force_topk(entries_of(X), q, 7)]
            assert approx == exact

    def test_clustered_deterministic_across_rebuilds(self):
        X, Q = topical_unit_vectors(500, 5, 16, seed=3)
        a = ClusteredIndex(n_clusters=8, n_probe=2, seed=5).fit(X)
        b = ClusteredIndex(n_clusters=8, n_probe=2, seed=5).fit(X)
        assert np.array_equal(a.assignments_, b.assignments_)
        for q in Q.astype(np.float64):
            assert a.search(q, 5) == b.search(q, 5)

    def test_clustered_recall_at_reference_settings(self):
        # topic-structured corpus at the reference shape: n=10000, d=64,
        # 32 clusters, probe 8, >=100 queries
        X, Q = topical_unit_vectors(10000, 120, 64, seed=3)
        flat = FlatIndex().fit(X)
        clustered = ClusteredIndex(n_clusters=32, n_probe=8, seed=0).fit(X)
        recalls = []
        for q in Q.astype(np.float64):
            exact = {r.key for r in flat.search(q, 10)}
            approx = {r.key for r in clustered.search(q, 10)}
            recalls.append(len(exact & approx) / 10)
        assert float(np.mean(recalls)) >= 0.9

    def test_clustered_recall_grows_with_probes(self):
        # isotropic data has no cluster structure: recall must still beat
        # the probed coverage fraction and reach 1.0 when probing all
        X = unit_rows(2000, 32, seed=6)
        flat = FlatIndex().fit(X)
        rng = np.random.default_rng(1)
        queries = rng.standard_normal((30, 32))
        queries /= np.linalg.norm(queries, axis=1, keepdims=True)

        def recall(n_probe):
            index = ClusteredIndex(n_clusters=16, n_probe=n_probe, seed=0).fit(X)
            hits = []
            for q in queries:
                exact = {r.key for r in flat.search(q, 10)}
                hits.append(len(exact & {r.key for r in index.search(q, 10)}) / 10)
            return float(np.mean(hits))

        r4, r16 = recall(4), recall(16)
        assert r4 > 4 / 16
        assert r16 == 1.0


class TestPersistence:
    def test_flat_round_trip_bitwise(self, tmp_path):
        X = unit_rows(100, 12, seed=8)
        index = FlatIndex().fit(X, keys=[f"k{i}" for i in range(100)])
        save_index(index, tmp_path / "i.drix")
        loaded = load_index(tmp_path / "i.drix")
        assert isinstance(loaded, FlatIndex)
        assert loaded.keys_ == index.keys_
        assert np.array_equal(loaded.vectors_, index.vectors_)
        q = X[3].astype(np.float64)
        q /= np.linalg.norm(q)
        assert loaded.search(q, 10) == index.search(q, 10)

    def test_round_trip_preserves_tie_order(self, tmp_path):
        base = unit_rows(2, 8, seed=4)
        X = np.vstack([base[0], base[1], base[0]])
        index = FlatIndex().fit(X)
        save_index(index, tmp_path / "i.drix")
        loaded = load_index(tmp_path / "i.drix")
        q = base[0].astype(np.float64)
        q /= np.linalg.norm(q)
        assert [r.key for r in loaded.search(q, 3)] == ["0", "2", "1"]

    def test_clustered_round_trip(self, tmp_path):
        X, Q = topical_unit_vectors(300, 5, 16, seed=2)
        index = ClusteredIndex(n_clusters=8, n_probe=3, seed=9).fit(X)
        save_index(index, tmp_path / "i.drix")
        loaded = load_index(tmp_path / "i.drix")
        assert isinstance(loaded, ClusteredIndex)
        assert loaded.n_probe == 3
        assert np.array_equal(loaded.assignments_, index.assignments_)
        assert np.array_equal(loaded.centroids_, index.centroids_)
        for q in Q.astype(np.float64):
            assert loaded.search(q, 5) == index.search(q, 5)

    def test_checksum_failure_no_partial_index(self, tmp_path):
        X = unit_rows(50, 8)
        save_index(FlatIndex().fit(X), tmp_path / "i.drix")
        data = bytearray((tmp_path / "i.drix").read_bytes())
        data[40] ^= 0x01
        (tmp_path / "i.drix").write_bytes(bytes(data))
        with pytest.raises(FileFormatError) as excinfo:
            load_index(tmp_path / "i.drix")
        assert "checksum" in str(excinfo.value)

    def test_truncated_file(self, tmp_path):
        X = unit_rows(50, 8)
        save_index(FlatIndex().fit(X), tmp_path / "i.drix")
        data = (tmp_path / "i.drix").read_bytes()
        (tmp_path / "i.drix").write_bytes(data[: len(data) // 2])
        with pytest.raises(FileFormatError):
            load_index(tmp_path / "i.drix")

    def test_empty_index_round_trip(self, tmp_path):
        index = FlatIndex().fit(np.empty((0, 8), dtype=np.float32))
        save_index(index, tmp_path / "i.drix")
        loaded = load_index(tmp_path / "i.drix")
        assert len(loaded) == 0
        assert loaded.search(np.array([1.0, 0, 0, 0, 0, 0, 0, 0]), 5) == []

    def test_build_index_facade(self, tmp_path):
        X = unit_rows(10, 8)
        index = build_index(entries_of(X), kind="flat")
        assert isinstance(index, FlatIndex)
        clustered = build_index(entries_of(X), kind="clustered", n_clusters=2)
        assert isinstance(clustered, ClusteredIndex)
        with pytest.raises(FileFormatError):
            build_index(entries_of(X), kind="hnsw")
