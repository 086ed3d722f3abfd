"""Diagonal-covariance Gaussian mixture models.

Covers density evaluation (log domain throughout; 42-dimensional Gaussians
underflow linear arithmetic immediately), k-means++ initialization, EM
training with a variance floor, and mean-only MAP adaptation of a speaker
model from a universal background model.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

LOG_2PI = np.log(2.0 * np.pi)
EMPTY_COMPONENT_COUNT = 1e-6


class GmmError(Exception):
    pass


def _as_frames(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise GmmError("training data must be a (frames, dims) array")
    return X


def kmeans_plus_plus(X: np.ndarray, n_clusters: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding followed by Lloyd iterations to convergence."""
    X = _as_frames(X)
    n = X.shape[0]
    if n_clusters > n:
        raise GmmError(f"{n} frames cannot seed {n_clusters} clusters")

    centers = np.empty((n_clusters, X.shape[1]))
    centers[0] = X[int(rng.integers(n))]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for k in range(1, n_clusters):
        total = d2.sum()
        if total <= 0.0:
            raise GmmError(
                f"fewer than {n_clusters} distinct frames available for seeding"
            )
        idx = int(np.searchsorted(np.cumsum(d2 / total), rng.random()))
        centers[k] = X[min(idx, n - 1)]
        d2 = np.minimum(d2, ((X - centers[k]) ** 2).sum(axis=1))

    x_sq = (X**2).sum(axis=1)
    assignments = np.full(n, -1)
    for _ in range(100):
        dists = x_sq[:, None] - 2.0 * (X @ centers.T) + (centers**2).sum(axis=1)[None, :]
        new_assignments = dists.argmin(axis=1)
        if np.array_equal(new_assignments, assignments):
            break
        assignments = new_assignments
        for k in range(n_clusters):
            members = X[assignments == k]
            if len(members):
                centers[k] = members.mean(axis=0)
            else:
                centers[k] = X[dists.min(axis=1).argmax()]
    return centers


class DiagonalGmm(BaseEstimator):
    """GMM with diagonal covariances, trained by k-means++ init then EM.

    Fitted attributes: weights_ (G,), means_ (G, M), variances_ (G, M), and
    log_likelihood_trace_, the mean per-frame log likelihood at each EM
    iteration. Convergence is declared when that mean improves by less than
    tol. Variances are floored at variance_floor_factor times the global
    per-dimension data variance after every M step.

    Training is a single full-batch numpy path (data parallelism is left to
    BLAS), so a fixed random_state reproduces the model bit for bit.
    """

    def __init__(
        self,
        n_components: int = 1024,
        max_iter: int = 100,
        tol: float = 1e-5,
        variance_floor_factor: float = 1e-3,
        random_state: int = 0,
    ):
        self.n_components = n_components
        self.max_iter = max_iter
        self.tol = tol
        self.variance_floor_factor = variance_floor_factor
        self.random_state = random_state

    @classmethod
    def from_parameters(cls, weights, means, variances) -> "DiagonalGmm":
        weights = np.asarray(weights, dtype=np.float64)
        means = np.asarray(means, dtype=np.float64)
        variances = np.asarray(variances, dtype=np.float64)
        if means.ndim == 1:
            means = means[:, None]
        if variances.ndim == 1:
            variances = variances[:, None]
        if not (weights.shape[0] == means.shape[0] == variances.shape[0]):
            raise GmmError("component count mismatch between weights/means/variances")
        if means.shape != variances.shape:
            raise GmmError("means and variances must have matching shapes")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-9:
            raise GmmError("weights must be nonnegative and sum to 1")
        if np.any(variances <= 0):
            raise GmmError("variances must be strictly positive")
        model = cls(n_components=weights.shape[0])
        model.weights_ = weights.copy()
        model.means_ = means.copy()
        model.variances_ = variances.copy()
        model.log_likelihood_trace_ = []
        return model

    @property
    def n_features_(self) -> int:
        self._check_fitted()
        return self.means_.shape[1]

    def _check_fitted(self):
        if not hasattr(self, "means_"):
            raise NotFittedError("this DiagonalGmm instance is not fitted yet")

    def _component_log_densities(self, X: np.ndarray) -> np.ndarray:
        """Per-frame, per-component Gaussian log densities, shape (N, G)."""
        inv_var = 1.0 / self.variances_
        log_norm = -0.5 * (
            self.means_.shape[1] * LOG_2PI + np.log(self.variances_).sum(axis=1)
        )
        quad = (
            (X**2) @ inv_var.T
            - 2.0 * (X @ (self.means_ * inv_var).T)
            + (self.means_**2 * inv_var).sum(axis=1)[None, :]
        )
        return log_norm[None, :] - 0.5 * quad

    def _log_weights(self) -> np.ndarray:
        # A collapsed component can carry weight exactly 0; its -inf log
        # joint is the intended value, so silence the divide warning.
        with np.errstate(divide="ignore"):
            return np.log(self.weights_)

    def log_density(self, X):
        """Natural-log mixture density via log-sum-exp over components."""
        self._check_fitted()
        x = np.asarray(X, dtype=np.float64)
        single = x.ndim == 1
        frames = np.atleast_2d(x)
        if frames.shape[1] != self.means_.shape[1]:
            raise GmmError(
                f"feature dim {frames.shape[1]} does not match model dim "
                f"{self.means_.shape[1]}"
            )
        if not np.all(np.isfinite(frames)):
            raise GmmError("non-finite feature values")
        log_joint = self._component_log_densities(frames) + self._log_weights()[None, :]
        peak = log_joint.max(axis=1, keepdims=True)
        out = peak[:, 0] + np.log(np.exp(log_joint - peak).sum(axis=1))
        return float(out[0]) if single else out

    def responsibilities(self, X) -> tuple[np.ndarray, np.ndarray]:
        """Posterior component weights per frame and per-frame log densities.

        Returns (gamma (N, G) with rows summing to 1, log_density (N,)).
        """
        self._check_fitted()
        frames = _as_frames(X)
        log_joint = self._component_log_densities(frames) + self._log_weights()[None, :]
        peak = log_joint.max(axis=1, keepdims=True)
        un = np.exp(log_joint - peak)
        totals = un.sum(axis=1, keepdims=True)
        return un / totals, peak[:, 0] + np.log(totals[:, 0])

    def fit(self, X, y=None) -> "DiagonalGmm":
        X = _as_frames(X)
        n, dims = X.shape
        if n < self.n_components:
            raise GmmError(
                f"{n} frames cannot fit {self.n_components} components"
            )
        rng = np.random.Generator(np.random.PCG64(self.random_state))
        global_var = X.var(axis=0)
        if np.any(global_var == 0):
            raise GmmError("training data has zero-variance dimensions")
        floor = self.variance_floor_factor * global_var

        self.means_ = kmeans_plus_plus(X, self.n_components, rng)
        self.variances_ = np.tile(global_var, (self.n_components, 1))
        self.weights_ = np.full(self.n_components, 1.0 / self.n_components)

        trace: list[float] = []
        empty_streak = np.zeros(self.n_components, dtype=int)
        for _ in range(self.max_iter):
            gamma, log_dens = self.responsibilities(X)
            if not np.all(np.isfinite(log_dens)):
                raise GmmError("non-finite likelihood during EM")
            trace.append(float(log_dens.mean()))
            if len(trace) > 1 and trace[-1] - trace[-2] < self.tol:
                break

            counts = gamma.sum(axis=0)
            occupied = counts >= EMPTY_COMPONENT_COUNT
            new_means = self.means_.copy()
            new_vars = self.variances_.copy()
            safe = np.where(occupied, counts, 1.0)
            means_upd = (gamma.T @ X) / safe[:, None]
            second = (gamma.T @ (X * X)) / safe[:, None]
            vars_upd = np.maximum(second - means_upd**2, floor[None, :])
            new_means[occupied] = means_upd[occupied]
            new_vars[occupied] = vars_upd[occupied]
            new_weights = counts / n

            # Collapsed components keep their parameters for one iteration,
            # then are re-seeded at the datum the mixture fits worst.
            empty_streak = np.where(occupied, 0, empty_streak + 1)
            for g in np.flatnonzero(empty_streak >= 2):
                worst = int(log_dens.argmin())
                new_means[g] = X[worst]
                new_vars[g] = global_var
                new_weights[g] = 1.0 / n
                empty_streak[g] = 0
            new_weights = new_weights / new_weights.sum()

            self.means_, self.variances_, self.weights_ = new_means, new_vars, new_weights

        self.log_likelihood_trace_ = trace
        return self


def map_adapt_means(ubm: DiagonalGmm, X, relevance_factor: float = 16.0) -> DiagonalGmm:
    """Mean-only MAP adaptation of a speaker model from the UBM.

    One pass: responsibilities against the UBM give soft counts n_g and
    data means; each adapted mean is alpha_g * data_mean + (1 - alpha_g) *
    ubm_mean with alpha_g = n_g / (n_g + relevance_factor). Weights and
    variances are copied from the UBM unchanged.
    """
    if relevance_factor < 0:
        raise GmmError("relevance factor must be >= 0")
    X = _as_frames(X)
    if X.shape[0] == 0:
        raise GmmError("empty adaptation data")
    if X.shape[1] != ubm.means_.shape[1]:
        raise GmmError(
            f"adaptation dim {X.shape[1]} does not match UBM dim {ubm.means_.shape[1]}"
        )
    gamma, _ = ubm.responsibilities(X)
    counts = gamma.sum(axis=0)
    occupied = counts > 0
    safe = np.where(occupied, counts, 1.0)
    data_means = (gamma.T @ X) / safe[:, None]
    data_means[~occupied] = ubm.means_[~occupied]
    denom = counts + relevance_factor
    alpha = np.divide(counts, denom, out=np.zeros_like(counts), where=denom > 0)
    means = alpha[:, None] * data_means + (1.0 - alpha)[:, None] * ubm.means_
    return DiagonalGmm.from_parameters(ubm.weights_, means, ubm.variances_)
