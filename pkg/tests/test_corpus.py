"""Dataset ingestion, splitting, and the derived condition matrices."""

import math

import numpy as np
import pytest
import scipy.sparse as sp

from cgsorec.corpus import (
    InteractionMatrix,
    SocialMatrix,
    auto_cap,
    build_debiased_test,
    copurchase,
    invert_preference,
    item_condition,
    load_interactions,
    load_social,
    longtail_submatrix,
    partition_items,
    social_condition,
    social_preference,
    split,
)
from cgsorec.errors import (
    ConfigError,
    DataError,
    DimensionError,
    ParseError,
)

from conftest import rand_binary_csr


def im(dense) -> InteractionMatrix:
    return InteractionMatrix(sp.csr_matrix(np.asarray(dense, dtype=np.float64)))


def sm(dense) -> SocialMatrix:
    return SocialMatrix(sp.csr_matrix(np.asarray(dense, dtype=np.float64)))


class TestLoadInteractions:
    def test_dedup(self, tmp_path):
        f = tmp_path / "r.tsv"
        f.write_text("0\t1\n0\t1\n1\t0\n")
        R = load_interactions(f)
        assert R.nnz == 2
        assert R.matrix[0, 1] == 1.0 and R.matrix[1, 0] == 1.0

    def test_empty_with_declared_dims(self, tmp_path):
        f = tmp_path / "r.tsv"
        f.write_text("")
        R = load_interactions(f, n_users=3, n_items=4)
        assert (R.n_users, R.n_items, R.nnz) == (3, 4, 0)

    def test_empty_without_dims_rejected(self, tmp_path):
        f = tmp_path / "r.tsv"
        f.write_text("")
        with pytest.raises(DataError):
            load_interactions(f)

    def test_malformed_line_numbered(self, tmp_path):
        f = tmp_path / "r.tsv"
        f.write_text("0\t1\nnot-an-id\t2\n")
        with pytest.raises(ParseError, match="line 2"):
            load_interactions(f)

    def test_wrong_field_count(self, tmp_path):
        f = tmp_path / "r.tsv"
        f.write_text("0\t1\t5\t9\n")
        with pytest.raises(ParseError, match="line 1"):
            load_interactions(f)

    def test_id_overflow_vs_declared_dims(self, tmp_path):
        f = tmp_path / "r.tsv"
        f.write_text("0\t9\n")
        with pytest.raises(DimensionError):
            load_interactions(f, n_users=2, n_items=5)

    def test_positive_rating_binarized_nonpositive_dropped(self, tmp_path):
        f = tmp_path / "r.tsv"
        f.write_text("0\t0\t4.5\n0\t1\t0\n1\t0\t-2\n1\t1\t1\n")
        R = load_interactions(f)
        assert R.nnz == 2
        assert R.matrix[0, 0] == 1.0 and R.matrix[1, 1] == 1.0

    def test_dims_inferred_from_max_ids(self, tmp_path):
        f = tmp_path / "r.tsv"
        f.write_text("2\t7\n")
        R = load_interactions(f)
        assert (R.n_users, R.n_items) == (3, 8)


class TestLoadSocial:
    def test_self_loop_dropped(self, tmp_path):
        f = tmp_path / "s.tsv"
        f.write_text("2\t2\n0\t1\n")
        S = load_social(f, n_users=3)
        assert S.matrix[2, 2] == 0.0
        assert S.matrix.diagonal().sum() == 0.0
        assert S.raw_edges == 1

    def test_symmetrize_default(self, tmp_path):
        f = tmp_path / "s.tsv"
        f.write_text("0\t1\n")
        S = load_social(f)
        assert S.matrix[0, 1] == 1.0 and S.matrix[1, 0] == 1.0
        assert S.raw_edges == 1

    def test_directed_kept_when_asked(self, tmp_path):
        f = tmp_path / "s.tsv"
        f.write_text("0\t1\n")
        S = load_social(f, symmetrize=False)
        assert S.matrix[0, 1] == 1.0 and S.matrix[1, 0] == 0.0

    def test_raw_edges_counts_directed_input(self, tmp_path):
        f = tmp_path / "s.tsv"
        f.write_text("0\t1\n1\t0\n2\t0\n")
        S = load_social(f)
        assert S.raw_edges == 3
        assert S.matrix.nnz == 4  # symmetrized pairs collapse

    def test_n_users_override(self, tmp_path):
        f = tmp_path / "s.tsv"
        f.write_text("0\t1\n")
        S = load_social(f, n_users=6)
        assert S.n_users == 6


class TestSplit:
    def test_ratios_must_sum_to_one(self):
        R = im(np.ones((2, 5)))
        with pytest.raises(ConfigError):
            split(R, (0.8, 0.1, 0.2), seed=0)
        with pytest.raises(ConfigError):
            split(R, (0.8, 0.2), seed=0)

    def test_ten_items_split_8_1_1(self):
        R = im(np.ones((1, 10)))
        b = split(R, (0.8, 0.1, 0.1), seed=3)
        assert b.train.nnz == 8 and b.valid.nnz == 1 and b.test.nnz == 1

    def test_single_item_user_all_train(self):
        dense = np.zeros((1, 5))
        dense[0, 2] = 1
        b = split(im(dense), (0.8, 0.1, 0.1), seed=0)
        assert b.train.nnz == 1 and b.valid.nnz == 0 and b.test.nnz == 0

    def test_under_three_items_all_train(self):
        dense = np.zeros((1, 5))
        dense[0, [1, 3]] = 1
        b = split(im(dense), (0.8, 0.1, 0.1), seed=0)
        assert b.train.nnz == 2 and b.valid.nnz == 0 and b.test.nnz == 0

    def test_determinism_bytes(self, rng):
        R = InteractionMatrix(rand_binary_csr(rng, 30, 40, 0.2))
        a = split(R, (0.8, 0.1, 0.1), seed=7)
        b = split(R, (0.8, 0.1, 0.1), seed=7)
        for pa, pb in ((a.train, b.train), (a.valid, b.valid), (a.test, b.test)):
            assert pa.matrix.indptr.tobytes() == pb.matrix.indptr.tobytes()
            assert pa.matrix.indices.tobytes() == pb.matrix.indices.tobytes()
        c = split(R, (0.8, 0.1, 0.1), seed=8)
        assert (
            a.test.matrix.indices.tobytes() != c.test.matrix.indices.tobytes()
            or a.valid.matrix.indices.tobytes() != c.valid.matrix.indices.tobytes()
        )

    def test_disjoint_union_property(self, rng):
        R = InteractionMatrix(rand_binary_csr(rng, 25, 30, 0.25))
        b = split(R, (0.8, 0.1, 0.1), seed=1)
        total = b.train.matrix + b.valid.matrix + b.test.matrix
        # disjoint: no entry counted twice; union: equals the source
        assert total.max() == 1.0
        assert (total != R.matrix).nnz == 0

    def test_per_user_size_rule_oracle(self, rng):
        R = InteractionMatrix(rand_binary_csr(rng, 40, 50, 0.3))
        b = split(R, (0.8, 0.1, 0.1), seed=5)
        for u in range(40):
            k = len(R.user_items(u))
            got_test = len(b.test.user_items(u))
            got_valid = len(b.valid.user_items(u))
            if k < 3:
                assert got_test == 0 and got_valid == 0
            else:
                assert got_test == max(1, math.floor(k * 0.1))
                assert got_valid == max(1, math.floor(k * 0.1))


class TestDebiasedTest:
    def counts(self, m: InteractionMatrix) -> np.ndarray:
        return np.asarray(m.matrix.sum(axis=0)).ravel().astype(int)

    def test_exact_cap_keeps_and_drops(self):
        dense = np.zeros((6, 3))
        dense[0:5, 0] = 1  # a: 5
        dense[0:5, 1] = 1  # b: 5
        dense[0, 2] = 1    # c: 1
        out = build_debiased_test(im(dense), cap=5, seed=0)
        c = self.counts(out)
        assert list(c) == [5, 5, 0]

    def test_cap_one_all_singletons_identity(self):
        dense = np.eye(3)
        out = build_debiased_test(im(dense), cap=1, seed=0)
        assert (out.matrix != im(dense).matrix).nnz == 0

    def test_mixed_counts_capped_equal(self):
        rng = np.random.default_rng(0)
        n_users = 12
        dense = np.zeros((n_users, 3))
        dense[rng.choice(n_users, 4, replace=False), 0] = 1
        dense[rng.choice(n_users, 7, replace=False), 1] = 1
        dense[rng.choice(n_users, 9, replace=False), 2] = 1
        out = build_debiased_test(im(dense), cap=4, seed=0)
        assert list(self.counts(out)) == [4, 4, 4]

    def test_equal_count_invariant_property(self, rng):
        test = InteractionMatrix(rand_binary_csr(rng, 50, 20, 0.25))
        out = build_debiased_test(test, cap="auto", seed=3)
        c = self.counts(out)
        survivors = c[c > 0]
        assert survivors.size > 0
        assert survivors.max() == survivors.min()

    def test_auto_cap_rule(self):
        counts = np.array([1, 1, 2, 3, 5, 8, 9, 9, 9, 9])
        # survival fractions: cap c keeps items with count >= c
        best = auto_cap(counts, survival=0.3)
        n_items = (counts > 0).sum()
        assert (counts >= best).sum() >= 0.3 * n_items
        assert best == max(
            c
            for c in range(1, counts.max() + 1)
            if (counts >= c).sum() >= 0.3 * n_items
        )

    def test_subset_of_source(self, rng):
        test = InteractionMatrix(rand_binary_csr(rng, 30, 10, 0.3))
        out = build_debiased_test(test, cap=2, seed=1)
        # every kept pair exists in the source test set
        diff = out.matrix - test.matrix
        assert diff.max() <= 0

    def test_empty_test_rejected(self):
        with pytest.raises(DataError):
            build_debiased_test(im(np.zeros((3, 3))), cap=1, seed=0)

    def test_determinism(self, rng):
        test = InteractionMatrix(rand_binary_csr(rng, 30, 10, 0.3))
        a = build_debiased_test(test, cap=2, seed=9)
        b = build_debiased_test(test, cap=2, seed=9)
        assert (a.matrix != b.matrix).nnz == 0


class TestPartitionItems:
    def test_ceil_count(self):
        R = im(np.ones((2, 100)))
        g = partition_items(R, 0.05)
        assert len(g.hot) == 5

    def test_tie_break_and_ceil(self):
        dense = np.zeros((9, 3))
        dense[0:9, 0] = 1  # i0: 9
        dense[0:9, 1] = 1  # i1: 9
        dense[0, 2] = 1    # i2: 1
        g = partition_items(im(dense), 0.34)  # ceil(1.02) = 2
        assert set(g.hot.tolist()) == {0, 1}

    def test_all_equal_counts_id_tiebreak(self):
        R = im(np.ones((3, 4)))
        g = partition_items(R, 0.5)
        assert set(g.hot.tolist()) == {0, 1}
        assert set(g.tail.tolist()) == {2, 3}

    def test_partition_invariants(self, rng):
        R = InteractionMatrix(rand_binary_csr(rng, 20, 30, 0.2))
        g = partition_items(R, 0.1)
        hot, tail = set(g.hot.tolist()), set(g.tail.tolist())
        assert hot | tail == set(range(30))
        assert not (hot & tail)
        assert len(hot) == math.ceil(0.1 * 30)

    def test_fraction_bounds(self):
        R = im(np.ones((2, 4)))
        for bad in (0.0, 1.0, -0.1, 1.5):
            with pytest.raises(ConfigError):
                partition_items(R, bad)


class TestLongtail:
    def groups(self, hot, tail, n):
        from cgsorec.corpus import ItemGroups

        return ItemGroups(
            hot=np.asarray(hot, dtype=np.int64),
            tail=np.asarray(tail, dtype=np.int64),
            hot_fraction=0.5,
            n_items=n,
        )

    def test_all_tail_identity(self):
        R = im([[1, 0], [1, 1]])
        out = longtail_submatrix(R, self.groups([], [0, 1], 2))
        assert (out.matrix != R.matrix).nnz == 0

    def test_all_hot_zero(self):
        R = im([[1, 0], [1, 1]])
        assert longtail_submatrix(R, self.groups([0, 1], [], 2)).nnz == 0

    def test_masking(self):
        R = im([[1, 1]])
        out = longtail_submatrix(R, self.groups([0], [1], 2))
        assert out.matrix[0, 0] == 0.0 and out.matrix[0, 1] == 1.0


class TestCopurchase:
    def test_hand_product(self):
        out = copurchase(im([[1, 1], [1, 0]]))
        np.testing.assert_array_equal(
            out.matrix.toarray(), [[2, 1], [1, 1]]
        )

    def test_zero(self):
        assert copurchase(im(np.zeros((3, 4)))).matrix.nnz == 0

    def test_identity_rows(self):
        out = copurchase(im(np.eye(2)))
        np.testing.assert_array_equal(out.matrix.toarray(), np.eye(2))

    def test_symmetry_vs_dense_product(self, rng):
        Rl = rand_binary_csr(rng, 50, 80, 0.08)
        out = copurchase(InteractionMatrix(Rl)).matrix.toarray()
        dense = Rl.toarray()
        np.testing.assert_array_equal(out, dense @ dense.T)
        np.testing.assert_array_equal(out, out.T)


class TestSocialCondition:
    def test_delta_zero_identity(self):
        S = sm([[0, 1], [1, 0]])
        scpl = sm([[2, 1], [1, 1]])
        out = social_condition(S, scpl, 0.0)
        assert (out.matrix != S.matrix).nnz == 0

    def test_blend_example(self):
        S = sm([[0, 1], [1, 0]])
        scpl = sm([[2, 1], [1, 1]])
        out = social_condition(S, scpl, 0.5)
        np.testing.assert_array_equal(out.matrix.toarray(), [[1, 1.5], [1.5, 0.5]])

    def test_zero_social_gives_scaled_copurchase(self):
        S = sm(np.zeros((2, 2)))
        scpl = sm([[2, 1], [1, 1]])
        out = social_condition(S, scpl, 1.0)
        np.testing.assert_array_equal(out.matrix.toarray(), scpl.matrix.toarray())

    def test_negative_delta_rejected(self):
        S = sm(np.zeros((2, 2)))
        with pytest.raises(ConfigError):
            social_condition(S, S, -0.1)


class TestSocialPreference:
    def test_identity_social(self):
        R = im([[1, 0], [1, 1]])
        out = social_preference(sm(np.eye(2)), R)
        np.testing.assert_array_equal(out.matrix.toarray(), R.matrix.toarray())

    def test_hand_product(self):
        out = social_preference(sm([[0, 1], [1, 0]]), im([[1, 0], [1, 1]]))
        np.testing.assert_array_equal(out.matrix.toarray(), [[1, 1], [1, 0]])

    def test_zero(self):
        out = social_preference(sm(np.zeros((2, 2))), im([[1, 0], [1, 1]]))
        assert out.nnz == 0

    def test_neighbor_counting_property(self, rng):
        S = rand_binary_csr(rng, 15, 15, 0.2)
        S.setdiag(0)
        S.eliminate_zeros()
        R = rand_binary_csr(rng, 15, 12, 0.25)
        out = social_preference(SocialMatrix(S), InteractionMatrix(R)).matrix.toarray()
        Sd, Rd = S.toarray(), R.toarray()
        for i in range(15):
            for j in range(12):
                expected = sum(
                    1 for k in range(15) if Sd[i, k] == 1 and Rd[k, j] == 1
                )
                assert out[i, j] == expected


class TestInvertPreference:
    def test_pointwise_values(self):
        out = invert_preference(im([[2, 0], [1, 4]]))
        np.testing.assert_array_equal(
            out.matrix.toarray(), [[0.5, 0.0], [1.0, 0.25]]
        )

    def test_involution_on_support(self, rng):
        vals = sp.csr_matrix(
            np.array([[2.0, 0.0, 0.5], [4.0, 1.0, 0.0]])
        )
        twice = invert_preference(invert_preference(InteractionMatrix(vals)))
        np.testing.assert_allclose(
            twice.matrix.toarray(), vals.toarray(), rtol=1e-15
        )

    def test_sparsity_pattern_preserved(self, rng):
        Rs = rand_binary_csr(rng, 10, 8, 0.3)
        Rs.data *= 3.0
        out = invert_preference(InteractionMatrix(Rs))
        assert np.array_equal(out.matrix.indices, Rs.indices)
        assert np.array_equal(out.matrix.indptr, Rs.indptr)

    def test_negative_rejected(self):
        with pytest.raises(ConfigError):
            invert_preference(im([[-1.0]]))


class TestItemCondition:
    def test_lambda_zero_identity(self):
        R = im([[1, 0], [0, 1]])
        Rs = im([[4, 4], [4, 4]])
        out = item_condition(R, Rs, 0.0)
        assert (out.matrix != R.matrix).nnz == 0

    def test_inverted_blend(self):
        R = im(np.zeros((1, 1)))
        Rs = im([[4.0]])
        out = item_condition(R, Rs, 1.0)
        assert out.matrix[0, 0] == 0.25

    def test_lambda_two_stacks_on_interaction(self):
        R = im([[1.0]])
        Rs = im([[1.0]])
        out = item_condition(R, Rs, 2.0)
        assert out.matrix[0, 0] == 3.0

    def test_negative_lambda_rejected(self):
        R = im([[1.0]])
        with pytest.raises(ConfigError):
            item_condition(R, R, -0.5)
