import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from relattn.tensor import Tensor, backward, finite_diff_grad
from relattn.relpos import (clip, edge_label_matrix, RelativeEmbeddingTables,
                            init_tables, gather_edge_tensors)


class TestClip:
    def test_saturates_above(self):
        assert clip(3, 2) == 2

    def test_identity_inside_range(self):
        assert clip(0, 5) == 0

    def test_saturates_below(self):
        assert clip(-7, 4) == -4

    @given(st.integers(-100, 100), st.integers(0, 20))
    def test_range_and_identity(self, x, k):
        c = clip(x, k)
        assert -k <= c <= k
        if abs(x) <= k:
            assert c == x

    def test_negative_k_rejected(self):
        with pytest.raises(ValueError):
            clip(1, -1)


class TestEdgeLabelMatrix:
    def test_n3_k1(self):
        assert np.array_equal(edge_label_matrix(3, 1),
                              [[1, 2, 2], [0, 1, 2], [0, 0, 1]])

    def test_n1(self):
        for k in (0, 3, 7):
            assert np.array_equal(edge_label_matrix(1, k), [[k]])

    def test_k0_all_zero(self):
        assert not edge_label_matrix(6, 0).any()

    @given(st.integers(1, 12), st.integers(0, 6))
    @settings(max_examples=40, deadline=None)
    def test_formula_and_toeplitz(self, n, k):
        m = edge_label_matrix(n, k)
        for i in range(n):
            for j in range(n):
                assert m[i, j] == clip(j - i, k) + k
        assert np.array_equal(m[:-1, :-1], m[1:, 1:])  # Toeplitz

    @given(st.integers(1, 12), st.integers(0, 6))
    @settings(max_examples=40, deadline=None)
    def test_antisymmetric_within_band(self, n, k):
        m = edge_label_matrix(n, k)
        for i in range(n):
            for j in range(n):
                if abs(j - i) <= k:
                    assert m[i, j] + m[j, i] == 2 * k

    def test_cached_and_readonly(self):
        a = edge_label_matrix(7, 3)
        assert edge_label_matrix(7, 3) is a
        with pytest.raises(ValueError):
            a[0, 0] = 9

    def test_bad_args(self):
        with pytest.raises(ValueError):
            edge_label_matrix(0, 1)
        with pytest.raises(ValueError):
            edge_label_matrix(3, -1)


class TestTables:
    def test_row_count_invariant(self):
        t = init_tables(k=3, d_a=4, rng=np.random.default_rng(0))
        assert t.w_k_table.shape == (7, 4)
        assert t.w_v_table.shape == (7, 4)

    def test_bad_shape_rejected(self):
        with pytest.raises(ValueError, match="w_k_table"):
            RelativeEmbeddingTables(Tensor(np.zeros((4, 2))),
                                    Tensor(np.zeros((5, 2))), k=2, d_a=2)

    def test_init_bound(self):
        t = init_tables(k=8, d_a=16, rng=np.random.default_rng(1))
        bound = 0.1 / np.sqrt(16)
        assert np.abs(t.w_k_table.data).max() <= bound
        assert np.abs(t.w_v_table.data).max() <= bound

    def test_seeded_init_reproducible(self):
        a = init_tables(2, 3, np.random.default_rng(42))
        b = init_tables(2, 3, np.random.default_rng(42))
        assert np.array_equal(a.w_k_table.data, b.w_k_table.data)


class TestGatherEdgeTensors:
    def _tables(self, rows, k, d_a):
        rows = np.asarray(rows, dtype=float)
        return RelativeEmbeddingTables(Tensor(rows, requires_grad=True),
                                       Tensor(rows.copy(), requires_grad=True),
                                       k=k, d_a=d_a)

    def test_offset_lookup(self):
        # rows for offsets -1, 0, +1
        t = self._tables([[-1.0], [0.0], [1.0]], k=1, d_a=1)
        a_k, _ = gather_edge_tensors(edge_label_matrix(2, 1), t)
        assert np.array_equal(a_k.data[..., 0], [[0.0, 1.0], [-1.0, 0.0]])

    def test_zero_tables_give_zero_edges(self):
        t = self._tables(np.zeros((5, 3)), k=2, d_a=3)
        a_k, a_v = gather_edge_tensors(edge_label_matrix(4, 2), t)
        assert not a_k.data.any() and not a_v.data.any()

    def test_shift_property(self):
        rng = np.random.default_rng(2)
        t = init_tables(2, 3, rng)
        a_k, a_v = gather_edge_tensors(edge_label_matrix(6, 2), t)
        for arr in (a_k.data, a_v.data):
            assert np.array_equal(arr[:-1, :-1], arr[1:, 1:])

    def test_clipping_saturation_bit_identical(self):
        rng = np.random.default_rng(3)
        n, k = 10, 3
        t = init_tables(k, 4, rng)
        a_k, _ = gather_edge_tensors(edge_label_matrix(n, k), t)
        for i in range(n):
            for j in range(n):
                if j - i >= k:
                    assert np.array_equal(a_k.data[i, j], a_k.data[i, i + k])
                if j - i <= -k:
                    assert np.array_equal(a_k.data[i, j], a_k.data[i, i - k])

    def test_table_row_gradient_is_label_sum(self):
        rng = np.random.default_rng(4)
        n, k, d_a = 5, 2, 3
        t = init_tables(k, d_a, rng)
        labels = edge_label_matrix(n, k)
        a_k, _ = gather_edge_tensors(labels, t)
        upstream = rng.normal(size=(n, n, d_a))
        backward((a_k * Tensor(upstream)).sum())
        for r in range(2 * k + 1):
            expect = upstream[labels == r].sum(axis=0)
            assert np.abs(t.w_k_table.grad[r] - expect).max() < 1e-12

    def test_table_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(5)
        n, k, d_a = 4, 1, 2
        t = init_tables(k, d_a, rng)
        labels = edge_label_matrix(n, k)
        probe = rng.normal(size=(n, n, d_a))

        def f(arr):
            tt = RelativeEmbeddingTables(Tensor(arr), t.w_v_table, k, d_a)
            a_k, _ = gather_edge_tensors(labels, tt)
            return float((a_k.data * probe).sum())

        a_k, _ = gather_edge_tensors(labels, t)
        backward((a_k * Tensor(probe)).sum())
        numeric = finite_diff_grad(f, t.w_k_table.data.copy())
        assert np.abs(t.w_k_table.grad - numeric).max() < 1e-6
