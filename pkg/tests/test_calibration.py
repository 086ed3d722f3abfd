"""Score-to-LR conversion: pooled-Gaussian closed form and logistic fit."""

import numpy as np
import pytest

from voicelr.calibration import (
    CalibrationError,
    PerfectSeparationError,
    ScoreCalibrator,
    fit_logistic,
    fit_pooled_gaussian,
    weighted_deviance,
)
from voicelr.synthetic import gen_score_sets


def two_point_class(mean, half_spread):
    return np.array([mean - half_spread, mean + half_spread])


class TestPooledGaussian:
    def test_published_worked_example(self):
        # Class means +0.5 / -1.5 with pooled variance 1 give a = 1, b = 2.
        same = two_point_class(0.5, 1.0)
        diff = two_point_class(-1.5, 1.0)
        model = fit_pooled_gaussian(same, diff)
        assert model.slope_ == 2.0
        assert model.intercept_ == 1.0
        assert model.same_mean_ == 0.5
        assert model.diff_mean_ == -1.5
        assert model.pooled_variance_ == 1.0

    def test_symmetric_classes_zero_intercept(self):
        model = fit_pooled_gaussian(two_point_class(1.2, 0.7), two_point_class(-1.2, 0.7))
        assert model.intercept_ == pytest.approx(0.0, abs=1e-12)

    def test_two_point_pooled_variance(self):
        d = 0.35
        model = fit_pooled_gaussian(two_point_class(2.0, d), two_point_class(-1.0, d))
        assert model.pooled_variance_ == pytest.approx(d * d, rel=1e-12)
        assert model.slope_ == pytest.approx(3.0 / (d * d), rel=1e-12)
        assert model.intercept_ == pytest.approx(-model.slope_ * 0.5, rel=1e-12)

    def test_zero_variance_rejected(self):
        with pytest.raises(CalibrationError):
            fit_pooled_gaussian(np.array([1.0, 1.0]), np.array([-1.0, -1.0]))

    def test_needs_two_per_class(self):
        with pytest.raises(CalibrationError):
            fit_pooled_gaussian(np.array([1.0]), np.array([-1.0, 0.0]))

    def test_direct_ratio_equals_affine_form(self):
        # The two-Gaussian density ratio and the affine log form are the
        # same model; check over a score grid.
        rng = np.random.default_rng(0)
        same = rng.normal(0.8, 1.1, 500)
        diff = rng.normal(-1.1, 1.1, 500)
        model = fit_pooled_gaussian(same, diff)
        mu_s, mu_d, var = model.same_mean_, model.diff_mean_, model.pooled_variance_

        def density(s, mu):
            return np.exp(-0.5 * (s - mu) ** 2 / var) / np.sqrt(2 * np.pi * var)

        for s in np.linspace(-10, 10, 41):
            direct = density(s, mu_s) / density(s, mu_d)
            affine = np.exp(model.transform(s))
            assert affine == pytest.approx(direct, rel=1e-9)


class TestLogistic:
    def test_recovers_gaussian_model_parameters(self):
        same, diff = gen_score_sets(0.5, -1.5, 1.0, 100_000, seed=11)
        model = fit_logistic(same, diff)
        assert model.intercept_ == pytest.approx(1.0, abs=0.05)
        assert model.slope_ == pytest.approx(2.0, abs=0.05)

    def test_identical_classes_no_information(self):
        scores = np.array([-1.0, -0.25, 0.5, 2.0])
        model = fit_logistic(scores, scores)
        assert model.slope_ == pytest.approx(0.0, abs=1e-10)
        assert model.intercept_ == pytest.approx(0.0, abs=1e-10)

    def test_duplicating_classes_identical_fit(self):
        same, diff = gen_score_sets(0.6, -0.9, 0.8, 300, seed=3)
        base = fit_logistic(same, diff)
        doubled = fit_logistic(np.tile(same, 2), np.tile(diff, 2))
        assert doubled.intercept_ == pytest.approx(base.intercept_, abs=1e-9)
        assert doubled.slope_ == pytest.approx(base.slope_, abs=1e-9)

    def test_imbalance_handled_by_equal_priors(self):
        # Downsampling one class changes the sample but the equal-prior
        # weighting keeps the fit near the balanced one.
        same, diff = gen_score_sets(0.5, -1.5, 1.0, 50_000, seed=5)
        balanced = fit_logistic(same, diff)
        imbalanced = fit_logistic(same[:10_000], diff)
        assert imbalanced.intercept_ == pytest.approx(balanced.intercept_, abs=0.1)
        assert imbalanced.slope_ == pytest.approx(balanced.slope_, abs=0.1)

    def test_perfect_separation_rejected(self):
        same = np.array([1.0, 1.2, 2.0])
        diff = np.array([-2.0, -1.5, -1.1])
        with pytest.raises(PerfectSeparationError):
            fit_logistic(same, diff)

    def test_agrees_with_lda_under_gaussian_assumption(self):
        same, diff = gen_score_sets(0.5, -1.5, 1.0, 100_000, seed=7)
        logistic = fit_logistic(same, diff)
        pooled = fit_pooled_gaussian(same, diff)
        assert logistic.intercept_ == pytest.approx(pooled.intercept_, abs=0.05)
        assert logistic.slope_ == pytest.approx(pooled.slope_, abs=0.05)

    def test_reduces_deviance_vs_null(self):
        same, diff = gen_score_sets(0.4, -0.8, 1.0, 2000, seed=9)
        model = fit_logistic(same, diff)
        null = ScoreCalibrator()
        null.intercept_, null.slope_ = 0.0, 0.0
        null.n_same_ = null.n_diff_ = len(same)
        assert weighted_deviance(model, same, diff) < weighted_deviance(null, same, diff)


class TestApply:
    def test_published_lr_value(self):
        model = fit_pooled_gaussian(two_point_class(0.5, 1.0), two_point_class(-1.5, 1.0))
        log_lr = model.transform(0.5)
        assert log_lr == pytest.approx(2.0, rel=1e-12)
        assert np.exp(log_lr) == pytest.approx(7.39, abs=0.01)

    def test_crossover_point(self):
        model = fit_pooled_gaussian(two_point_class(0.5, 1.0), two_point_class(-1.5, 1.0))
        assert model.transform(-model.intercept_ / model.slope_) == pytest.approx(0.0, abs=1e-12)

    def test_monotone_for_positive_slope(self):
        model = fit_pooled_gaussian(two_point_class(0.5, 1.0), two_point_class(-1.5, 1.0))
        scores = np.linspace(-5, 5, 101)
        out = model.transform(scores)
        assert np.all(np.diff(out) > 0)

    def test_unfitted_rejected(self):
        from sklearn.exceptions import NotFittedError

        with pytest.raises(NotFittedError):
            ScoreCalibrator().transform(0.0)
