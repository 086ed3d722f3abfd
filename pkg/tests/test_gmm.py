"""Diagonal GMM: density, k-means init, EM training, MAP adaptation."""

import itertools

import numpy as np
import pytest

from voicelr.gmm import DiagonalGmm, GmmError, kmeans_plus_plus, map_adapt_means
from voicelr.random import make_rng


def normal_pdf(x, mean, var):
    return np.exp(-0.5 * (x - mean) ** 2 / var) / np.sqrt(2 * np.pi * var)


def single_gaussian(mean=0.0, var=1.0):
    return DiagonalGmm.from_parameters([1.0], [[mean]], [[var]])


class TestLogDensity:
    def test_standard_normal_peak(self):
        assert single_gaussian().log_density(np.array([0.0])) == pytest.approx(
            np.log(1 / np.sqrt(2 * np.pi)), rel=1e-12
        )
        assert single_gaussian().log_density(np.array([0.0])) == pytest.approx(-0.9189, abs=1e-4)

    def test_duplicate_components_collapse(self):
        double = DiagonalGmm.from_parameters([0.5, 0.5], [[1.5], [1.5]], [[2.0], [2.0]])
        x = np.array([0.3])
        assert double.log_density(x) == pytest.approx(
            single_gaussian(1.5, 2.0).log_density(x), rel=1e-12
        )

    def test_two_component_closed_form(self):
        # Hand-evaluated mixture: 0.3 N(0; -1, 1) + 0.7 N(0; 2, 4).
        gmm = DiagonalGmm.from_parameters([0.3, 0.7], [[-1.0], [2.0]], [[1.0], [4.0]])
        expected = np.log(0.3 * normal_pdf(0.0, -1.0, 1.0) + 0.7 * normal_pdf(0.0, 2.0, 4.0))
        assert gmm.log_density(np.array([0.0])) == pytest.approx(expected, rel=1e-12)

    def test_agrees_with_linear_domain(self):
        rng = make_rng(13)
        gmm = DiagonalGmm.from_parameters(
            [0.25, 0.75],
            rng.normal(size=(2, 3)),
            rng.uniform(0.5, 2.0, size=(2, 3)),
        )
        for _ in range(20):
            x = rng.normal(size=3)
            linear = sum(
                w * np.prod(normal_pdf(x, m, v))
                for w, m, v in zip(gmm.weights_, gmm.means_, gmm.variances_)
            )
            assert gmm.log_density(x) == pytest.approx(np.log(linear), rel=1e-9)

    def test_dimension_mismatch(self):
        with pytest.raises(GmmError):
            single_gaussian().log_density(np.array([0.0, 1.0]))

    def test_batch_matches_single(self):
        rng = make_rng(14)
        gmm = DiagonalGmm.from_parameters(
            [0.5, 0.5], rng.normal(size=(2, 4)), rng.uniform(0.5, 2, size=(2, 4))
        )
        X = rng.normal(size=(10, 4))
        batch = gmm.log_density(X)
        for i in range(10):
            assert batch[i] == pytest.approx(gmm.log_density(X[i]), rel=1e-12)


class TestKmeans:
    def test_single_cluster_is_mean(self):
        rng = make_rng(0)
        X = rng.normal(size=(50, 3))
        centers = kmeans_plus_plus(X, 1, make_rng(1))
        np.testing.assert_allclose(centers[0], X.mean(axis=0), rtol=1e-12)

    def test_two_clouds_vs_bruteforce(self):
        # Brute-force oracle: best 2-partition of 12 points by total
        # within-cluster squared distance.
        rng = make_rng(2)
        X = np.concatenate([rng.normal(-4, 0.5, size=(6, 2)), rng.normal(4, 0.5, size=(6, 2))])
        best_cost, best_centers = np.inf, None
        for bits in itertools.product([0, 1], repeat=12):
            bits = np.array(bits, dtype=bool)
            if not bits.any() or bits.all():
                continue
            c0, c1 = X[bits].mean(axis=0), X[~bits].mean(axis=0)
            cost = ((X[bits] - c0) ** 2).sum() + ((X[~bits] - c1) ** 2).sum()
            if cost < best_cost:
                best_cost, best_centers = cost, sorted([tuple(c0), tuple(c1)])
        centers = kmeans_plus_plus(X, 2, make_rng(3))
        np.testing.assert_allclose(sorted(map(tuple, centers)), best_centers, rtol=1e-9)

    def test_deterministic(self):
        rng = make_rng(4)
        X = rng.normal(size=(40, 2))
        a = kmeans_plus_plus(X, 4, make_rng(7))
        b = kmeans_plus_plus(X, 4, make_rng(7))
        assert np.array_equal(a, b)

    def test_insufficient_distinct_points(self):
        X = np.tile([[1.0, 2.0]], (10, 1))
        with pytest.raises(GmmError):
            kmeans_plus_plus(X, 3, make_rng(0))


class TestEmFit:
    def test_single_component_closed_form(self):
        # Integer-valued data keeps every sum exact, so the closed-form
        # collapse (mean = sample mean, variance = population variance)
        # holds to the last bit.
        rng = make_rng(5)
        X = rng.integers(0, 4, size=(16, 2)).astype(np.float64)
        gmm = DiagonalGmm(n_components=1, random_state=0).fit(X)
        assert np.array_equal(gmm.means_[0], X.mean(axis=0))
        assert np.array_equal(gmm.variances_[0], X.var(axis=0))
        assert gmm.weights_[0] == 1.0
        assert len(gmm.log_likelihood_trace_) == 2

    def test_two_component_recovery(self):
        rng = make_rng(6)
        n = 5000
        labels = rng.random(n) < 0.5
        X = np.where(labels, -3.0, 3.0) + rng.normal(size=n)
        gmm = DiagonalGmm(n_components=2, random_state=1).fit(X[:, None])
        recovered = np.sort(gmm.means_[:, 0])
        assert recovered[0] == pytest.approx(-3.0, abs=0.15)
        assert recovered[1] == pytest.approx(3.0, abs=0.15)
        np.testing.assert_allclose(gmm.weights_, [0.5, 0.5], atol=0.05)

    def test_trace_non_decreasing(self):
        for seed in range(6):
            rng = make_rng(seed)
            X = np.concatenate(
                [rng.normal(-1, 1, size=(150, 2)), rng.normal(2, 0.5, size=(150, 2))]
            )
            gmm = DiagonalGmm(n_components=4, random_state=seed, max_iter=40).fit(X)
            trace = np.array(gmm.log_likelihood_trace_)
            assert np.all(np.diff(trace) >= -1e-8 * np.abs(trace[:-1]))

    def test_responsibility_rows_sum_to_one(self):
        rng = make_rng(8)
        X = rng.normal(size=(200, 3))
        gmm = DiagonalGmm(n_components=3, random_state=2).fit(X)
        gamma, _ = gmm.responsibilities(X)
        np.testing.assert_allclose(gamma.sum(axis=1), 1.0, atol=1e-9)
        assert np.all(gamma >= 0) and np.all(gamma <= 1)

    def test_weights_sum_to_one(self):
        rng = make_rng(9)
        X = rng.normal(size=(120, 2))
        gmm = DiagonalGmm(n_components=5, random_state=3).fit(X)
        assert gmm.weights_.sum() == pytest.approx(1.0, abs=1e-9)

    def test_variance_floor_respected(self):
        rng = make_rng(10)
        X = rng.normal(size=(100, 2))
        X[:50] = X[0]  # massive duplication invites collapse
        gmm = DiagonalGmm(n_components=2, random_state=4, variance_floor_factor=1e-3).fit(X)
        floor = 1e-3 * X.var(axis=0)
        assert np.all(gmm.variances_ >= floor - 1e-15)

    def test_too_few_frames(self):
        with pytest.raises(GmmError):
            DiagonalGmm(n_components=5).fit(np.zeros((3, 2)) + np.arange(3)[:, None])

    def test_deterministic_fit(self):
        rng = make_rng(11)
        X = rng.normal(size=(300, 3))
        a = DiagonalGmm(n_components=4, random_state=5).fit(X)
        b = DiagonalGmm(n_components=4, random_state=5).fit(X)
        assert np.array_equal(a.means_, b.means_)
        assert np.array_equal(a.variances_, b.variances_)
        assert np.array_equal(a.weights_, b.weights_)


class TestMapAdapt:
    def test_huge_relevance_keeps_ubm(self):
        rng = make_rng(12)
        ubm = DiagonalGmm(n_components=2, random_state=0).fit(rng.normal(size=(200, 2)))
        data = rng.normal(3.0, 1.0, size=(50, 2))
        adapted = map_adapt_means(ubm, data, relevance_factor=1e12)
        np.testing.assert_allclose(adapted.means_, ubm.means_, atol=1e-6)

    def test_zero_relevance_gives_data_means(self):
        ubm = single_gaussian(0.0, 1.0)
        rng = make_rng(13)
        X = rng.integers(0, 8, size=(16, 1)).astype(np.float64)
        adapted = map_adapt_means(ubm, X, relevance_factor=0.0)
        assert np.array_equal(adapted.means_[0], X.mean(axis=0))

    def test_reynolds_midpoint(self):
        # Single component, 16 frames, relevance 16: alpha = 16/32 = 0.5,
        # adapted mean is exactly the midpoint of UBM and sample means.
        ubm = DiagonalGmm.from_parameters([1.0], [[2.0, -1.0]], [[1.0, 1.0]])
        rng = make_rng(14)
        X = rng.integers(-4, 5, size=(16, 2)).astype(np.float64)
        adapted = map_adapt_means(ubm, X, relevance_factor=16.0)
        expected = (X.mean(axis=0) + ubm.means_[0]) / 2.0
        assert np.array_equal(adapted.means_[0], expected)

    def test_weights_and_variances_copied(self):
        rng = make_rng(15)
        ubm = DiagonalGmm(n_components=3, random_state=1).fit(rng.normal(size=(300, 2)))
        adapted = map_adapt_means(ubm, rng.normal(size=(40, 2)), 16.0)
        assert np.array_equal(adapted.weights_, ubm.weights_)
        assert np.array_equal(adapted.variances_, ubm.variances_)

    def test_convexity_per_dimension(self):
        rng = make_rng(16)
        ubm = DiagonalGmm(n_components=4, random_state=2).fit(rng.normal(size=(400, 3)))
        X = rng.normal(0.5, 1.5, size=(60, 3))
        adapted = map_adapt_means(ubm, X, relevance_factor=8.0)
        gamma, _ = ubm.responsibilities(X)
        counts = gamma.sum(axis=0)
        data_means = (gamma.T @ X) / counts[:, None]
        lo = np.minimum(ubm.means_, data_means) - 1e-12
        hi = np.maximum(ubm.means_, data_means) + 1e-12
        assert np.all(adapted.means_ >= lo) and np.all(adapted.means_ <= hi)

    def test_empty_data_rejected(self):
        with pytest.raises(GmmError):
            map_adapt_means(single_gaussian(), np.empty((0, 1)), 16.0)

    def test_unoccupied_component_keeps_ubm_mean(self):
        ubm = DiagonalGmm.from_parameters(
            [0.5, 0.5], [[0.0], [100.0]], [[1.0], [1.0]]
        )
        X = np.zeros((10, 1))  # all mass lands on component 0
        adapted = map_adapt_means(ubm, X, relevance_factor=0.0)
        assert adapted.means_[1, 0] == 100.0
