import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nknn.ann import NeighborSet
from nknn.knnmath import (
    RetrievalParams,
    aggregate_positionwise,
    interpolate,
    is_no_evidence,
    knn_distribution,
    no_evidence,
)

from reference import knn_probs

V = 8
A, B, C = 4, 5, 6


def neighbors(values, distances):
    values = np.asarray(values, dtype=np.int32).reshape(len(distances), -1)
    return NeighborSet(np.arange(len(distances), dtype=np.int64), np.asarray(distances, dtype=np.float64), values)


class TestKnnDistribution:
    @pytest.mark.parametrize("d", [0.0, 3.5, 1e4])
    def test_single_neighbor_one_hot(self, d):
        p = knn_distribution(neighbors([A], [d]), 0, 10.0, V)
        assert p[A] == 1.0 and p.sum() == 1.0

    def test_equal_distances_split_evenly(self):
        p = knn_distribution(neighbors([A, B], [2.0, 2.0]), 0, 10.0, V)
        assert p[A] == pytest.approx(0.5, abs=1e-12) and p[B] == pytest.approx(0.5, abs=1e-12)

    def test_hand_example(self):
        p = knn_distribution(neighbors([A, A, B], [0.0, 0.0, 0.0]), 0, 1.0, V)
        assert abs(p[A] - 2 / 3) <= 1e-9 and abs(p[B] - 1 / 3) <= 1e-9

    def test_offset_selects_earlier_slot(self):
        nb = neighbors([[A, B], [C, B]], [0.0, math.log(3.0)])
        p1 = knn_distribution(nb, 1, 1.0, V)
        assert p1[A] == pytest.approx(0.75, abs=1e-12) and p1[C] == pytest.approx(0.25, abs=1e-12)
        assert knn_distribution(nb, 0, 1.0, V)[B] == pytest.approx(1.0)

    def test_empty_neighbors_no_evidence(self):
        p = knn_distribution(NeighborSet.empty(2), 0, 10.0, V)
        assert is_no_evidence(p) and p.shape == (V,)

    @pytest.mark.parametrize("tau", [0.0, -1.0])
    def test_bad_tau(self, tau):
        with pytest.raises(ValueError):
            knn_distribution(neighbors([A], [0.0]), 0, tau, V)

    def test_offset_beyond_tuple(self):
        with pytest.raises(ValueError):
            knn_distribution(neighbors([[A, B]], [0.0]), 2, 1.0, V)

    def test_large_tau_gives_empirical_frequency(self):
        p = knn_distribution(neighbors([A, B, A, C], [0.1, 0.5, 0.9, 0.2]), 0, 1e6, V)
        for tok, freq in ((A, 0.5), (B, 0.25), (C, 0.25)):
            assert abs(p[tok] - freq) <= 1e-6

    def test_small_tau_gives_one_hot_on_nearest(self):
        p = knn_distribution(neighbors([B, A, C], [0.5, 1.0, 2.0]), 0, 1e-6, V)
        assert abs(p[B] - 1.0) <= 1e-9 and abs(p[A]) <= 1e-9

    def test_matches_unshifted_formula(self):
        nb = neighbors([A, B, A, C], [1.0, 2.0, 3.0, 4.0])
        expected = knn_probs([(d, i, v) for i, (d, v) in enumerate(zip(nb.distances.tolist(), nb.values[:, 0].tolist()))], 2.0, V)
        assert np.allclose(knn_distribution(nb, 0, 2.0, V), expected, atol=1e-12, rtol=0)

    @settings(max_examples=200, deadline=None)
    @given(
        st.lists(st.tuples(st.floats(0, 500), st.integers(4, V - 1)), min_size=1, max_size=12),
        st.floats(0.05, 1000),
    )
    def test_is_a_distribution_matching_oracle(self, items, tau):
        nb = neighbors([v for _, v in items], [d for d, _ in items])
        p = knn_distribution(nb, 0, tau, V)
        assert abs(p.sum() - 1.0) <= 1e-9 and (p >= 0).all()
        expected = knn_probs([(d, i, v) for i, (d, v) in enumerate(items)], tau, V)
        if sum(expected) > 0.5:  # the unshifted oracle underflows for large d / tau
            assert np.allclose(p, expected, atol=1e-9, rtol=0)

    @given(st.lists(st.tuples(st.floats(0, 50), st.integers(4, V - 1)), min_size=1, max_size=8))
    def test_shift_invariance(self, items):
        base = neighbors([v for _, v in items], [d for d, _ in items])
        shifted = neighbors([v for _, v in items], [d + 7.0 for d, _ in items])
        assert np.allclose(knn_distribution(base, 0, 3.0, V), knn_distribution(shifted, 0, 3.0, V), atol=1e-12)


class TestInterpolate:
    model = np.array([0.0, 0.0, 0.0, 0.0, 0.6, 0.3, 0.1, 0.0])
    knn = np.array([0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.5, 0.5])

    def test_lambda_zero_is_model(self):
        assert np.array_equal(interpolate(self.model, self.knn, 0.0), self.model)

    def test_lambda_one_is_knn(self):
        assert np.array_equal(interpolate(self.model, self.knn, 1.0), self.knn)

    def test_hand_example(self):
        out = interpolate(np.array([0.8, 0.2]), np.array([0.0, 1.0]), 0.5)
        assert np.allclose(out, [0.4, 0.6], atol=1e-9, rtol=0)

    def test_no_evidence_keeps_model(self):
        for lam in (0.0, 0.5, 1.0):
            assert np.array_equal(interpolate(self.model, no_evidence(V), lam), self.model)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            interpolate(np.ones(3) / 3, np.ones(4) / 4, 0.5)

    def test_lambda_range(self):
        with pytest.raises(ValueError):
            interpolate(self.model, self.knn, 1.5)

    @given(st.floats(0, 1))
    def test_convex_combination_sums_to_one(self, lam):
        out = interpolate(self.model, self.knn, lam)
        assert abs(out.sum() - 1.0) <= 1e-12 and (out >= 0).all()


class TestAggregate:
    def test_single_is_identity(self):
        d = np.array([0.0, 0.25, 0.75])
        assert np.allclose(aggregate_positionwise([d]), d, atol=1e-12)

    def test_identical_pair(self):
        d = np.array([0.1, 0.2, 0.7])
        assert np.allclose(aggregate_positionwise([d, d]), d, atol=1e-12)

    def test_hand_example(self):
        out = aggregate_positionwise([np.array([1.0, 0.0]), np.array([0.0, 1.0])])
        assert np.allclose(out, [0.5, 0.5], atol=1e-9, rtol=0)

    def test_empty_is_no_evidence(self):
        assert is_no_evidence(aggregate_positionwise([], 5))
        with pytest.raises(ValueError):
            aggregate_positionwise([])

    def test_no_evidence_members_are_neutral(self):
        d = np.array([0.3, 0.7])
        assert np.allclose(aggregate_positionwise([d, np.zeros(2)]), d, atol=1e-12)

    @given(st.lists(st.lists(st.floats(0, 1), min_size=4, max_size=4).filter(lambda r: sum(r) > 0), min_size=1, max_size=5), st.randoms())
    def test_permutation_invariant(self, rows, rnd):
        dists = [np.array(r) / sum(r) for r in rows]
        shuffled = list(dists)
        rnd.shuffle(shuffled)
        assert np.array_equal(aggregate_positionwise(dists), aggregate_positionwise(shuffled))

    @given(st.integers(0, 6).map(lambda e: 2.0**e))
    def test_scaling_invariance(self, scale):
        d1, d2 = np.array([0.5, 0.25, 0.25]), np.array([0.0, 0.5, 0.5])
        assert np.array_equal(aggregate_positionwise([d1, d2]), aggregate_positionwise([scale * d1, scale * d2]))


def test_params_validation():
    with pytest.raises(ValueError):
        RetrievalParams(k=0)
    with pytest.raises(ValueError):
        RetrievalParams(tau=0.0)
    with pytest.raises(ValueError):
        RetrievalParams(lam=-0.1)
