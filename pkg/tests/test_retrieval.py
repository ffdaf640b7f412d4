import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from underloc.retrieval import (
    SimilarityMatrix,
    compute_similarity,
    full_ranking,
    load_matrix,
    save_matrix,
    top_k,
)


def brute_force_distances(queries, database):
    """Independent per-pair oracle: explicit loops, no vectorization."""
    out = np.zeros((len(database), len(queries)))
    for j, d in enumerate(database):
        for i, q in enumerate(queries):
            out[j, i] = math.sqrt(sum((a - b) ** 2 for a, b in zip(d, q)))
    return out


class TestComputeSimilarity:
    def test_3_4_5_triangle(self):
        s = compute_similarity(np.array([[0.0, 0.0]]), np.array([[3.0, 4.0]]))
        assert s.values[0, 0] == 5.0

    def test_identical_descriptor_exact_zero(self):
        v = np.array([[0.1, 0.7, -2.3]], dtype=np.float32)
        s = compute_similarity(v, v.copy())
        assert s.values[0, 0] == 0.0

    def test_hand_computed_table(self):
        queries = np.array([[0.0, 0.0], [1.0, 2.0]])
        database = np.array([[3.0, 4.0], [0.0, 0.0], [-1.0, 1.0]])
        s = compute_similarity(queries, database)
        expected = brute_force_distances(queries, database)
        assert s.shape == (3, 2)
        assert np.allclose(s.values, expected, rtol=0, atol=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="dimension"):
            compute_similarity(np.zeros((2, 3)), np.zeros((2, 4)))

    def test_entries_nonnegative_finite(self):
        rng = np.random.default_rng(0)
        s = compute_similarity(rng.normal(size=(5, 8)), rng.normal(size=(7, 8)))
        assert np.all(s.values >= 0) and np.all(np.isfinite(s.values))

    @given(seed=st.integers(0, 2**32 - 1))
    @settings(max_examples=25)
    def test_symmetry_transpose(self, seed):
        rng = np.random.default_rng(seed)
        a = rng.normal(size=(rng.integers(1, 6), 4)).astype(np.float32)
        b = rng.normal(size=(rng.integers(1, 6), 4)).astype(np.float32)
        ab = compute_similarity(a, b).values
        ba = compute_similarity(b, a).values
        assert np.allclose(ab, ba.T, rtol=0, atol=1e-12)

    def test_streaming_above_cap_matches_dense(self):
        rng = np.random.default_rng(1)
        q = rng.normal(size=(6, 5)).astype(np.float32)
        d = rng.normal(size=(9, 5)).astype(np.float32)
        dense = compute_similarity(q, d)
        streamed = compute_similarity(q, d, memory_cap_bytes=1)
        assert not streamed.is_dense
        for i in range(6):
            assert np.array_equal(streamed.column(i), dense.column(i))
        assert np.array_equal(streamed.values, dense.values)


class TestTopK:
    def make(self, columns):
        return SimilarityMatrix(
            n_database=len(columns), n_queries=len(columns[0]) if columns else 0,
            _dense=np.array(columns, dtype=float),
        )

    def test_sorted_column(self):
        s = self.make([[4.0], [1.0], [3.0]])
        cands = top_k(s, 0, 2)
        assert cands.database_indices == [1, 2]
        assert [d for _, d in cands.entries] == [1.0, 3.0]

    def test_k_equals_database(self):
        s = self.make([[4.0], [1.0], [3.0]])
        assert top_k(s, 0, 3).database_indices == [1, 2, 0]

    def test_k_above_database_returns_all(self):
        s = self.make([[4.0], [1.0], [3.0]])
        assert len(top_k(s, 0, 99)) == 3

    def test_tie_break_by_index(self):
        s = self.make([[2.0], [2.0], [2.0]])
        assert top_k(s, 0, 2).database_indices == [0, 1]

    def test_exclusion(self):
        s = self.make([[1.0], [2.0], [3.0]])
        assert top_k(s, 0, 2, exclude={0}).database_indices == [1, 2]

    def test_k_below_one_rejected(self):
        s = self.make([[1.0]])
        with pytest.raises(ValueError):
            top_k(s, 0, 0)

    @given(seed=st.integers(0, 2**32 - 1), k=st.integers(1, 8))
    @settings(max_examples=40)
    def test_nesting_and_monotone_invariance(self, seed, k):
        rng = np.random.default_rng(seed)
        column = rng.random(10)
        s = self.make([[v] for v in column])
        smaller = top_k(s, 0, k)
        larger = top_k(s, 0, k + 1)
        assert larger.database_indices[:k] == smaller.database_indices
        # strictly increasing transform leaves the selection unchanged
        transformed = self.make([[2.0 * v + 1.0] for v in column])
        assert top_k(transformed, 0, k).database_indices == smaller.database_indices

    def test_full_ranking_sorted(self):
        rng = np.random.default_rng(7)
        column = rng.random(12)
        s = self.make([[v] for v in column])
        ranking = full_ranking(s, 0)
        assert sorted(ranking.tolist()) == list(range(12))
        assert np.all(np.diff(column[ranking]) >= 0)


class TestMatrixDump:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(2)
        s = compute_similarity(
            rng.normal(size=(3, 4)).astype(np.float32),
            rng.normal(size=(5, 4)).astype(np.float32),
        )
        save_matrix(s, tmp_path / "s.uls1")
        loaded = load_matrix(tmp_path / "s.uls1")
        assert loaded.shape == (5, 3)
        assert np.allclose(loaded, s.values, rtol=0, atol=1e-6)
