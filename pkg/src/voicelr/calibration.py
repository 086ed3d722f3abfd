"""Score-to-likelihood-ratio conversion.

Two fitting routes for the same affine map log(LR) = a + b * score: the
pooled-variance two-Gaussian closed form, and logistic regression trained
with equal-prior class weights by deviance minimization. Logistic is the
default (it is the more assumption-robust of the two); the closed form is
kept as the analytic cross-check. Natural logarithms throughout.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

METHOD_POOLED_GAUSSIAN = "pooled_gaussian"
METHOD_LOGISTIC = "logistic"


class CalibrationError(Exception):
    pass


class PerfectSeparationError(CalibrationError):
    """Training classes do not overlap; the LR map would be unbounded.

    An unbounded score-to-LR conversion is not defensible evidence; the
    caller must add training data instead.
    """


class ConvergenceError(CalibrationError):
    pass


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    expz = np.exp(z[~pos])
    out[~pos] = expz / (1.0 + expz)
    return out


class ScoreCalibrator(BaseEstimator):
    """Affine score-to-log-LR map fitted from labeled training scores.

    method is 'logistic' or 'pooled_gaussian'. Fitted attributes:
    intercept_, slope_; pooled_gaussian additionally exposes same_mean_,
    diff_mean_ and pooled_variance_. For well-ordered training data the
    slope is positive, making the conversion monotonic.
    """

    def __init__(self, method: str = METHOD_LOGISTIC, max_iter: int = 200, tol: float = 1e-8):
        self.method = method
        self.max_iter = max_iter
        self.tol = tol

    def fit(self, scores, labels) -> "ScoreCalibrator":
        scores = np.asarray(scores, dtype=np.float64)
        labels = np.asarray(labels, dtype=bool)
        if scores.shape != labels.shape or scores.ndim != 1:
            raise CalibrationError("scores and labels must be matching 1-D arrays")
        same = scores[labels]
        diff = scores[~labels]
        if len(same) < 2 or len(diff) < 2:
            raise CalibrationError(
                f"need >= 2 scores per class, got {len(same)} same / {len(diff)} different"
            )
        if self.method == METHOD_POOLED_GAUSSIAN:
            self._fit_pooled(same, diff)
        elif self.method == METHOD_LOGISTIC:
            self._fit_logistic(scores, labels)
        else:
            raise CalibrationError(f"unknown calibration method {self.method!r}")
        self.n_same_ = int(len(same))
        self.n_diff_ = int(len(diff))
        return self

    def _fit_pooled(self, same: np.ndarray, diff: np.ndarray) -> None:
        mu_s = same.mean()
        mu_d = diff.mean()
        pooled = (np.sum((same - mu_s) ** 2) + np.sum((diff - mu_d) ** 2)) / (
            len(same) + len(diff)
        )
        if pooled == 0.0:
            raise CalibrationError("zero pooled variance")
        self.same_mean_ = float(mu_s)
        self.diff_mean_ = float(mu_d)
        self.pooled_variance_ = float(pooled)
        self.slope_ = float((mu_s - mu_d) / pooled)
        self.intercept_ = float(-self.slope_ * (mu_s + mu_d) / 2.0)

    def _fit_logistic(self, scores: np.ndarray, labels: np.ndarray) -> None:
        same = scores[labels]
        diff = scores[~labels]
        if same.min() > diff.max() or diff.min() > same.max():
            raise PerfectSeparationError(
                "same-speaker and different-speaker training scores do not overlap"
            )
        n = len(scores)
        # Equal-prior weighting: each class carries half the total weight
        # regardless of how imbalanced the trial counts are.
        weights = np.where(labels, n / (2.0 * len(same)), n / (2.0 * len(diff)))
        y = labels.astype(np.float64)
        design = np.column_stack([np.ones(n), scores])

        theta = np.zeros(2)
        for _ in range(self.max_iter):
            p = _sigmoid(design @ theta)
            gradient = design.T @ (weights * (p - y))
            if np.abs(gradient).max() < self.tol:
                break
            curvature = weights * p * (1.0 - p)
            hessian = design.T @ (design * curvature[:, None])
            try:
                step = np.linalg.solve(hessian, gradient)
            except np.linalg.LinAlgError as exc:
                raise CalibrationError(
                    f"singular IRLS system (degenerate training scores): {exc}"
                ) from exc
            theta = theta - step
            if abs(theta[1]) > 1e3:
                raise PerfectSeparationError(
                    "slope diverging; training classes are (near-)separable"
                )
        else:
            raise ConvergenceError(
                f"logistic calibration did not converge in {self.max_iter} iterations"
            )
        self.intercept_ = float(theta[0])
        self.slope_ = float(theta[1])

    def _check_fitted(self):
        if not hasattr(self, "slope_"):
            raise NotFittedError("this ScoreCalibrator instance is not fitted yet")

    def transform(self, scores):
        """Natural-log likelihood ratio: intercept + slope * score."""
        self._check_fitted()
        scores = np.asarray(scores, dtype=np.float64)
        out = self.intercept_ + self.slope_ * scores
        return float(out) if out.ndim == 0 else out


def fit_pooled_gaussian(same_scores, diff_scores) -> ScoreCalibrator:
    """Closed-form calibration from the two class means and pooled variance."""
    scores, labels = _stack(same_scores, diff_scores)
    return ScoreCalibrator(method=METHOD_POOLED_GAUSSIAN).fit(scores, labels)


def fit_logistic(same_scores, diff_scores) -> ScoreCalibrator:
    """Equal-prior logistic-regression calibration by deviance minimization."""
    scores, labels = _stack(same_scores, diff_scores)
    return ScoreCalibrator(method=METHOD_LOGISTIC).fit(scores, labels)


def _stack(same_scores, diff_scores):
    same = np.asarray(same_scores, dtype=np.float64)
    diff = np.asarray(diff_scores, dtype=np.float64)
    scores = np.concatenate([same, diff])
    labels = np.concatenate([np.ones(len(same), dtype=bool), np.zeros(len(diff), dtype=bool)])
    return scores, labels


def weighted_deviance(calibrator: ScoreCalibrator, same_scores, diff_scores) -> float:
    """Equal-prior binomial deviance of a fitted calibrator on given scores."""
    scores, labels = _stack(same_scores, diff_scores)
    n = len(scores)
    n_same = int(labels.sum())
    weights = np.where(labels, n / (2.0 * n_same), n / (2.0 * (n - n_same)))
    z = calibrator.intercept_ + calibrator.slope_ * scores
    # -2 * weighted log-likelihood, stable via softplus.
    softplus = np.logaddexp(0.0, -np.where(labels, z, -z))
    return float(2.0 * np.sum(weights * softplus))
