import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ssan.losses import ProtocolError
from ssan.numerics import DimensionError, Tape
from ssan.semantics import (CentroidSet, cosine_matrix, cosine_similarity, gs_label, gs_labels,
                            refine_pseudo_labels, supervised_centroids, triplet_centroids)


def brute_cos(a, b):
    na = math.sqrt(sum(x * x for x in a))
    nb = math.sqrt(sum(x * x for x in b))
    if na < 1e-12 or nb < 1e-12:
        return -1.0
    return sum(x * y for x, y in zip(a, b)) / (na * nb)


def brute_argmax(scores):
    best, arg = -math.inf, -1
    for i, s in enumerate(scores):
        if s > best:
            best, arg = s, i
    return arg


def brute_refine(logits, Z, mu, defined):
    out = []
    for row, z in zip(logits, Z):
        nn = brute_argmax(list(row))
        gs = brute_argmax([brute_cos(z, m) if ok else -math.inf for m, ok in zip(mu, defined)])
        out.append(nn if nn == gs else -1)
    return np.array(out)


class TestCosine:
    def test_orthogonal(self):
        assert cosine_similarity([1, 0], [0, 1]) == 0.0

    def test_scale(self):
        assert cosine_similarity([1, 1], [2, 2]) == pytest.approx(1.0, abs=1e-15)

    def test_zero_vector_sentinel(self):
        assert cosine_similarity([0, 0], [3, 1]) == -1.0
        assert cosine_similarity([3, 1], [0, 0]) == -1.0

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            cosine_similarity([1, 2], [1, 2, 3])

    @pytest.mark.parametrize("seed", range(5))
    def test_matrix_matches_scalar(self, seed):
        rng = np.random.default_rng(seed)
        Z, mu = rng.normal(size=(6, 4)), rng.normal(size=(3, 4))
        Z[2] = 0.0
        M = cosine_matrix(Z, mu)
        for i in range(6):
            for k in range(3):
                assert M[i, k] == pytest.approx(brute_cos(Z[i], mu[k]), abs=1e-12)


class TestSupervisedCentroids:
    def test_single_source_instance(self):
        c = supervised_centroids([[3.0, -1.0]], [0], np.zeros((0, 2)), [], 1)
        np.testing.assert_array_equal(c.mu, [[3.0, -1.0]])

    def test_identical_features(self):
        z = np.array([[0.2, 0.7]])
        c = supervised_centroids(z, [0], z, [0], 1)
        np.testing.assert_allclose(c.mu, z, atol=1e-15)

    def test_pooled_mean(self):
        c = supervised_centroids([[1.0, 0.0]], [0], [[0.0, 1.0]], [0], 1)
        np.testing.assert_array_equal(c.mu, [[0.5, 0.5]])

    def test_pooled_mean_uses_counts_not_midpoint(self):
        c = supervised_centroids([[3.0], [3.0]], [0, 0], [[0.0]], [0], 1)
        assert c.mu[0, 0] == pytest.approx(2.0)

    def test_empty_class_flagged(self):
        c = supervised_centroids([[1.0, 0.0]], [0], [[0.0, 1.0]], [0], 3)
        assert c.defined_mask.tolist() == [True, False, False]


class TestGsLabel:
    def test_self_similarity(self):
        mu = np.zeros((5, 5))
        for k in range(5):
            mu[k, k] = 1.0 + k
        c = CentroidSet(mu, np.ones(5, bool))
        assert gs_label(mu[3], c) == 3

    def test_tie_breaks_low(self):
        mu = np.array([[0, -1.0], [1.0, 0], [0, 1.0], [-1.0, 0], [2.0, 0]])
        c = CentroidSet(mu, np.ones(5, bool))
        assert gs_label([5.0, 0.0], c) == 1

    def test_undefined_class_never_wins(self):
        mu = np.array([[1.0, 0.0], [0.0, 1.0]])
        c = CentroidSet(mu, np.array([False, True]))
        assert gs_label([1.0, 0.0], c) == 1

    def test_no_defined_centroid(self):
        with pytest.raises(ProtocolError):
            gs_label([1.0], CentroidSet(np.zeros((2, 1)), np.zeros(2, bool)))

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_exhaustive_scan(self, seed):
        rng = np.random.default_rng(seed)
        mu, z = rng.normal(size=(5, 7)), rng.normal(size=7)
        c = CentroidSet(mu, np.ones(5, bool))
        assert gs_label(z, c) == brute_argmax([brute_cos(z, m) for m in mu])

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000), st.floats(1e-3, 1e3))
    def test_positive_rescaling_invariant(self, seed, s):
        rng = np.random.default_rng(seed)
        mu, Z = rng.normal(size=(4, 3)), rng.normal(size=(10, 3))
        c = CentroidSet(mu, np.ones(4, bool))
        np.testing.assert_array_equal(gs_labels(Z, c), gs_labels(s * Z, c))


class TestRefine:
    def test_agreement_selected(self):
        c = CentroidSet(np.eye(3), np.ones(3, bool))
        a = refine_pseudo_labels([[0, 0, 5.0]], [[0, 0, 1.0]], c)
        assert a.selected.tolist() == [True] and a.assigned.tolist() == [2]

    def test_disagreement_filtered(self):
        c = CentroidSet(np.eye(6), np.ones(6, bool))
        z = np.zeros((1, 6))
        z[0, 5] = 1.0
        a = refine_pseudo_labels([[0, 0, 5.0, 0, 0, 0]], z, c)
        assert a.selected.tolist() == [False] and a.assigned.tolist() == [-1]
        assert a.y_nn.tolist() == [2] and a.y_gs.tolist() == [5]

    def test_six_mixed_instances(self):
        rng = np.random.default_rng(42)
        c = CentroidSet(rng.normal(size=(3, 4)), np.ones(3, bool))
        logits, Z = rng.normal(size=(6, 3)), rng.normal(size=(6, 4))
        # plant two agreements
        Z[0], Z[1] = c.mu[1], c.mu[2]
        logits[0], logits[1] = [0, 9, 0], [0, 0, 9]
        a = refine_pseudo_labels(logits, Z, c)
        np.testing.assert_array_equal(a.assigned, brute_refine(logits, Z, c.mu, c.defined_mask))
        assert a.selected[:2].all()

    def test_without_gs_keeps_everything(self):
        rng = np.random.default_rng(1)
        c = CentroidSet(rng.normal(size=(3, 4)), np.ones(3, bool))
        logits = rng.normal(size=(8, 3))
        a = refine_pseudo_labels(logits, rng.normal(size=(8, 4)), c, use_gs=False)
        assert a.n_selected == 8
        np.testing.assert_array_equal(a.assigned, logits.argmax(axis=1))

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            refine_pseudo_labels(np.zeros((2, 2)), np.zeros((3, 2)), CentroidSet(np.eye(2), np.ones(2, bool)))

    @pytest.mark.parametrize("seed", range(20))
    def test_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        k, d, n = 5, 6, 200
        mu = rng.normal(size=(k, d))
        defined = rng.random(k) > 0.2
        defined[0] = True
        Z = rng.normal(size=(n, d))
        # logits correlated with geometry so that both outcomes occur
        logits = Z @ mu.T + rng.normal(size=(n, k))
        a = refine_pseudo_labels(logits, Z, CentroidSet(mu, defined))
        expect = brute_refine(logits, Z, mu, defined)
        np.testing.assert_array_equal(a.assigned, expect)
        np.testing.assert_array_equal(a.selected, expect >= 0)

    @pytest.mark.parametrize("seed", range(5))
    def test_invariant_assigned_iff_selected(self, seed):
        rng = np.random.default_rng(seed)
        c = CentroidSet(rng.normal(size=(4, 3)), np.ones(4, bool))
        a = refine_pseudo_labels(rng.normal(size=(30, 4)), rng.normal(size=(30, 3)), c)
        assert ((a.assigned >= 0) == a.selected).all()
        np.testing.assert_array_equal(a.assigned[a.selected], a.y_gs[a.selected])
        np.testing.assert_array_equal(a.assigned[a.selected], a.y_nn[a.selected])


class TestTriplet:
    def test_hand_means(self):
        t = Tape()
        tc = triplet_centroids(t, [[2.0, 0.0]], [0], [[0.0, 2.0]], [0], 1)
        np.testing.assert_array_equal(tc.mu_s.value, [[2.0, 0.0]])
        np.testing.assert_array_equal(tc.mu_t.value, [[0.0, 2.0]])
        np.testing.assert_array_equal(tc.mu_st.value, [[1.0, 1.0]])

    def test_missing_target_inactive(self):
        t = Tape()
        tc = triplet_centroids(t, [[1.0], [2.0]], [0, 1], [[0.0]], [0], 2)
        assert tc.active_mask.tolist() == [True, False]

    def test_equal_sets_collapse(self):
        t = Tape()
        z = np.array([[1.0, 2.0], [5.0, 0.0]])
        tc = triplet_centroids(t, z, [0, 0], z, [0, 0], 1)
        np.testing.assert_allclose(tc.mu_s.value, tc.mu_t.value)
        np.testing.assert_allclose(tc.mu_s.value, tc.mu_st.value)

    @pytest.mark.parametrize("seed", range(10))
    def test_pooled_is_count_weighted(self, seed):
        rng = np.random.default_rng(seed)
        ns, nt, k = 12, 7, 4
        ys, yt = rng.integers(0, k, ns), rng.integers(0, k, nt)
        t = Tape()
        tc = triplet_centroids(t, rng.normal(size=(ns, 3)), ys, rng.normal(size=(nt, 3)), yt, k)
        for c in np.flatnonzero(tc.active_mask):
            a, b = tc.n_s[c], tc.n_t[c]
            expect = (a * tc.mu_s.value[c] + b * tc.mu_t.value[c]) / (a + b)
            np.testing.assert_allclose(tc.mu_st.value[c], expect, atol=1e-10, rtol=0)

    def test_centroids_stay_on_tape(self):
        from ssan import numerics as nx
        t = Tape()
        zs = t.param("zs", [[1.0, 0.0], [3.0, 0.0]])
        zt = t.param("zt", [[0.0, 1.0]])
        tc = triplet_centroids(t, zs, [0, 0], zt, [0], 1)
        g = nx.backward(t, nx.total(t, tc.mu_s))
        np.testing.assert_allclose(g["zs"], 0.5)
        assert not g["zt"].any()
