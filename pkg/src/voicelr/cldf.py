"""Canonical linear discriminant functions for embedding-domain compensation.

Projects embeddings onto the directions maximizing the ratio of
between-speaker to within-speaker variance. No classification is performed;
the discriminant axes are used purely as a transform, and the output feeds
the two-covariance PLDA stage (which has no subspace model of its own).
"""

from __future__ import annotations

import numpy as np
import scipy.linalg
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError


class CldfError(Exception):
    pass


def _group_by_label(X: np.ndarray, labels) -> dict:
    groups: dict = {}
    for row, label in zip(X, labels):
        groups.setdefault(label, []).append(row)
    return {label: np.stack(rows) for label, rows in groups.items()}


class CldfTransform(BaseEstimator, TransformerMixin):
    """Discriminant projection fitted from speaker-labeled embeddings.

    Solves the generalized eigenproblem S_b u = lambda S_w u with S_b the
    covariance of speaker means and S_w the pooled within-speaker
    covariance, keeping the top n_dims eigenvectors normalized so that
    u' S_w u = 1 (projected training data has unit within-speaker variance
    per retained dimension). n_dims=None selects min(50, speakers - 1).
    """

    def __init__(self, n_dims: int | None = None, regularization: float = 1e-6):
        self.n_dims = n_dims
        self.regularization = regularization

    def fit(self, X, y) -> "CldfTransform":
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2:
            raise CldfError("embeddings must be a 2-D array")
        groups = _group_by_label(X, y)
        if len(groups) < 2:
            raise CldfError("need at least 2 speakers")
        for label, rows in groups.items():
            if rows.shape[0] < 2:
                raise CldfError(f"speaker {label!r} has fewer than 2 embeddings")

        dim = X.shape[1]
        max_dims = min(dim, len(groups) - 1)
        n_dims = self.n_dims if self.n_dims is not None else min(50, max_dims)
        if not 1 <= n_dims <= max_dims:
            raise CldfError(
                f"n_dims {n_dims} outside [1, {max_dims}] for "
                f"{len(groups)} speakers in {dim} dimensions"
            )

        speaker_means = np.stack([rows.mean(axis=0) for rows in groups.values()])
        self.mean_ = speaker_means.mean(axis=0)
        centered_means = speaker_means - self.mean_
        s_b = centered_means.T @ centered_means / len(groups)
        deviations = np.concatenate(
            [rows - rows.mean(axis=0) for rows in groups.values()]
        )
        s_w = deviations.T @ deviations / deviations.shape[0]
        s_w = s_w + (self.regularization * np.trace(s_w) / dim) * np.eye(dim)

        try:
            eigenvalues, vectors = scipy.linalg.eigh(s_b, s_w)
        except scipy.linalg.LinAlgError as exc:
            raise CldfError(f"singular within-speaker scatter: {exc}") from exc
        order = np.argsort(eigenvalues)[::-1][:n_dims]
        # scipy.linalg.eigh returns S_w-orthonormal eigenvectors already.
        self.projection_ = vectors[:, order]
        self.eigenvalues_ = np.clip(eigenvalues[order], 0.0, None)
        return self

    def transform(self, X) -> np.ndarray:
        if not hasattr(self, "projection_"):
            raise NotFittedError("this CldfTransform instance is not fitted yet")
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        rows = np.atleast_2d(X)
        if rows.shape[1] != self.projection_.shape[0]:
            raise CldfError(
                f"embedding dim {rows.shape[1]} does not match transform input dim "
                f"{self.projection_.shape[0]}"
            )
        out = (rows - self.mean_) @ self.projection_
        return out[0] if single else out
