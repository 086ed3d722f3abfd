"""Fixed-length recording embeddings via total-variability factor analysis.

Pipeline: Baum-Welch statistics against a UBM -> low-rank T matrix trained
by EM with a minimum-divergence step -> i-vector = posterior mean of the
latent factor. Whitening (radial Gaussianization + length normalization)
and a PCA-over-supervectors extractor are provided alongside.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .features import FeatureMatrix
from .gmm import DiagonalGmm
from .random import standard_normal

STAGE_RAW_IVECTOR = "raw_ivector"
STAGE_WHITENED = "whitened"
STAGE_CLDF = "cldf"


class IvectorError(Exception):
    pass


class ZeroVectorError(IvectorError):
    """Embedding with zero norm cannot be length-normalized."""


@dataclass(frozen=True)
class Embedding:
    """One recording's fixed-length vector with its processing stage."""

    vector: np.ndarray
    stage: str
    recording_id: str = ""

    def __post_init__(self):
        if not np.all(np.isfinite(self.vector)):
            raise IvectorError(f"{self.recording_id}: non-finite embedding")
        if self.stage == STAGE_WHITENED:
            norm = float(np.linalg.norm(self.vector))
            if abs(norm - 1.0) > 1e-9:
                raise IvectorError(
                    f"{self.recording_id}: whitened embedding norm {norm} != 1"
                )


@dataclass(frozen=True)
class BaumWelchStats:
    """Soft counts and centralized first-order sums w.r.t. a UBM."""

    n: np.ndarray  # (G,)
    f: np.ndarray  # (G, M)
    n_frames: int
    recording_id: str = ""

    def __post_init__(self):
        if np.any(self.n < 0):
            raise IvectorError(f"{self.recording_id}: negative soft count")
        if abs(self.n.sum() - self.n_frames) > 1e-6:
            raise IvectorError(
                f"{self.recording_id}: soft counts sum to {self.n.sum()}, "
                f"expected {self.n_frames}"
            )
        if not np.all(np.isfinite(self.f)):
            raise IvectorError(f"{self.recording_id}: non-finite first-order stats")


def accumulate_stats(ubm: DiagonalGmm, features: FeatureMatrix) -> BaumWelchStats:
    """0th/1st-order statistics of one recording against the UBM.

    f_g sums responsibility-weighted deviations from the UBM component
    means, so it is exactly zero for components with no occupancy.
    """
    if features.n_frames == 0:
        raise IvectorError(f"{features.source_id}: empty features")
    gamma, _ = ubm.responsibilities(features.vectors)
    n = gamma.sum(axis=0)
    f = gamma.T @ features.vectors - n[:, None] * ubm.means_
    return BaumWelchStats(
        n=n, f=f, n_frames=features.n_frames, recording_id=features.source_id
    )


def _principal_sqrt(matrix: np.ndarray) -> np.ndarray:
    """Symmetric principal square root of a symmetric PSD matrix."""
    eigenvalues, vectors = np.linalg.eigh(matrix)
    if np.any(eigenvalues < -1e-10 * max(eigenvalues.max(), 1.0)):
        raise IvectorError("matrix is not positive semi-definite")
    return (vectors * np.sqrt(np.clip(eigenvalues, 0.0, None))) @ vectors.T


class TotalVariability(BaseEstimator):
    """Low-rank total-variability matrix trained on Baum-Welch statistics.

    Each EM iteration runs the per-recording posterior E step, a per-
    component maximum-likelihood update of T, and a minimum-divergence step
    that rescales T by the symmetric square root of the empirical posterior
    second moment so the latent factors track a standard Gaussian prior.

    Fitted attributes: t_blocks_ (G, M, R), ubm_ (the reference UBM), and
    delta_trace_, the Frobenius change of T per iteration.
    """

    def __init__(self, rank: int = 400, n_iter: int = 5, random_state: int = 0):
        self.rank = rank
        self.n_iter = n_iter
        self.random_state = random_state

    def _check_fitted(self):
        if not hasattr(self, "t_blocks_"):
            raise NotFittedError("this TotalVariability instance is not fitted yet")

    @property
    def t_matrix_(self) -> np.ndarray:
        """T stacked as (G*M, R)."""
        self._check_fitted()
        g, m, r = self.t_blocks_.shape
        return self.t_blocks_.reshape(g * m, r)

    def _posteriors(
        self, t_blocks: np.ndarray, counts: np.ndarray, f_flat: np.ndarray, inv_sigma: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray]:
        """Posterior means and covariances for a batch of recordings.

        counts is (J, G), f_flat is (J, G*M). Returns (phi (J, R),
        cov (J, R, R)).
        """
        g, m, r = t_blocks.shape
        t_flat = t_blocks.reshape(g * m, r)
        t_scaled = t_flat * inv_sigma[:, None]
        # W_g = T_g' Sigma_g^-1 T_g, precomputed once per iteration.
        w = np.einsum("gmr,gms->grs", t_blocks, t_scaled.reshape(g, m, r))
        precisions = np.eye(r)[None, :, :] + np.tensordot(counts, w, axes=1)
        rhs = f_flat @ t_scaled
        try:
            phi = np.linalg.solve(precisions, rhs[:, :, None])[:, :, 0]
            cov = np.linalg.inv(precisions)
        except np.linalg.LinAlgError as exc:
            raise IvectorError(f"singular posterior precision: {exc}") from exc
        if not (np.all(np.isfinite(phi)) and np.all(np.isfinite(cov))):
            raise IvectorError("non-finite posterior (degenerate statistics)")
        return phi, cov

    def fit(self, stats: list[BaumWelchStats], ubm: DiagonalGmm) -> "TotalVariability":
        if self.n_iter < 1:
            raise IvectorError("n_iter must be >= 1")
        if len(stats) == 0:
            raise IvectorError("no training statistics")
        if len(stats) < self.rank:
            warnings.warn(
                f"training a rank-{self.rank} subspace on only {len(stats)} "
                "recordings; expect a poorly determined estimate"
            )
        g, m = ubm.means_.shape
        if self.rank > g * m:
            raise IvectorError(f"rank {self.rank} exceeds supervector dim {g * m}")
        for s in stats:
            if s.n.shape != (g,) or s.f.shape != (g, m):
                raise IvectorError(
                    f"{s.recording_id}: stats shape does not match UBM ({g}, {m})"
                )

        rng = np.random.Generator(np.random.PCG64(self.random_state))
        counts = np.stack([s.n for s in stats])  # (J, G)
        f_flat = np.stack([s.f.reshape(g * m) for s in stats])  # (J, G*M)
        inv_sigma = (1.0 / ubm.variances_).reshape(g * m)

        t_blocks = standard_normal(rng, (g, m, self.rank))
        deltas = []
        for _ in range(self.n_iter):
            step = self._em_step(t_blocks, counts, f_flat, inv_sigma)
            deltas.append(float(np.linalg.norm(step["t_new"] - t_blocks)))
            t_blocks = step["t_new"]

        self.t_blocks_ = t_blocks
        self.ubm_ = ubm
        self.delta_trace_ = deltas
        return self

    def _em_step(
        self, t_blocks: np.ndarray, counts: np.ndarray, f_flat: np.ndarray, inv_sigma: np.ndarray
    ) -> dict:
        """One EM + minimum-divergence update, returning all intermediates."""
        g, m, _ = t_blocks.shape
        phi, cov = self._posteriors(t_blocks, counts, f_flat, inv_sigma)
        second = cov + phi[:, :, None] * phi[:, None, :]  # (J, R, R)

        # Per-component ML update: T_g = C_g A_g^-1.
        a = np.tensordot(counts.T, second, axes=1)  # (G, R, R)
        c = np.einsum("jgm,jr->gmr", f_flat.reshape(len(counts), g, m), phi)
        try:
            t_ml = np.linalg.solve(a, c.transpose(0, 2, 1)).transpose(0, 2, 1)
        except np.linalg.LinAlgError as exc:
            raise IvectorError(
                f"degenerate statistics: singular M-step system ({exc})"
            ) from exc

        # Minimum divergence: rotate by the symmetric root of the empirical
        # prior covariance so the latent factors track a standard Gaussian.
        p_inv = second.mean(axis=0)
        q = _principal_sqrt(p_inv)
        t_new = t_ml @ q
        if not np.all(np.isfinite(t_new)):
            raise IvectorError("non-finite T update")
        return {
            "phi": phi,
            "cov": cov,
            "second": second,
            "t_ml": t_ml,
            "p_inv": p_inv,
            "q": q,
            "t_new": t_new,
        }

    def posterior(self, stats: BaumWelchStats) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and covariance of the latent factor for one recording."""
        self._check_fitted()
        g, m, _ = self.t_blocks_.shape
        if stats.n.shape != (g,) or stats.f.shape != (g, m):
            raise IvectorError(
                f"{stats.recording_id}: stats shape does not match model ({g}, {m})"
            )
        inv_sigma = (1.0 / self.ubm_.variances_).reshape(g * m)
        phi, cov = self._posteriors(
            self.t_blocks_, stats.n[None, :], stats.f.reshape(1, g * m), inv_sigma
        )
        return phi[0], cov[0]

    def extract(self, stats: BaumWelchStats) -> np.ndarray:
        """i-vector: the posterior mean under the trained T matrix."""
        return self.posterior(stats)[0]

    def transform(self, stats: list[BaumWelchStats]) -> np.ndarray:
        return np.stack([self.extract(s) for s in stats])


class EmbeddingWhitener(BaseEstimator, TransformerMixin):
    """Radial Gaussianization followed by length normalization.

    fit estimates the training mean and the inverse principal square root
    of the (diagonally regularized) training covariance; transform centers,
    decorrelates, and projects onto the unit hypersphere.
    """

    def __init__(self, regularization: float = 1e-6):
        self.regularization = regularization

    def fit(self, X, y=None) -> "EmbeddingWhitener":
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] < 2:
            raise IvectorError("whitening needs at least 2 training embeddings")
        self.mean_ = X.mean(axis=0)
        centered = X - self.mean_
        cov = centered.T @ centered / X.shape[0]
        dim = X.shape[1]
        cov = cov + (self.regularization * np.trace(cov) / dim) * np.eye(dim)
        eigenvalues, vectors = np.linalg.eigh(cov)
        if eigenvalues.min() <= 0:
            raise IvectorError("whitening covariance not positive definite")
        self.condition_number_ = float(eigenvalues.max() / eigenvalues.min())
        self.transform_ = (vectors / np.sqrt(eigenvalues)) @ vectors.T
        return self

    def transform(self, X) -> np.ndarray:
        if not hasattr(self, "transform_"):
            raise NotFittedError("this EmbeddingWhitener instance is not fitted yet")
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        rows = np.atleast_2d(X)
        decorrelated = (rows - self.mean_) @ self.transform_
        norms = np.linalg.norm(decorrelated, axis=1)
        if np.any(norms == 0.0):
            raise ZeroVectorError(
                "embedding coincides with the whitening mean; cannot length-normalize"
            )
        out = decorrelated / norms[:, None]
        return out[0] if single else out


def supervector(gmm: DiagonalGmm) -> np.ndarray:
    """Concatenated component means, first component first."""
    return gmm.means_.reshape(-1).copy()


class SupervectorPca(BaseEstimator):
    """Alternative extractor: PCA of MAP-adapted supervectors.

    Supervectors are centered by the UBM supervector (not the sample mean,
    matching the subspace picture where embeddings parametrize deviations
    from the UBM), then projected onto the leading principal axes.
    """

    def __init__(self, rank: int = 400):
        self.rank = rank

    def fit(self, gmms: list[DiagonalGmm], ubm: DiagonalGmm) -> "SupervectorPca":
        if len(gmms) == 0:
            raise IvectorError("no training models")
        self.ubm_supervector_ = supervector(ubm)
        deviations = np.stack([supervector(g) for g in gmms]) - self.ubm_supervector_
        max_rank = min(deviations.shape)
        if self.rank > max_rank:
            raise IvectorError(
                f"rank {self.rank} exceeds available rank {max_rank} "
                f"({deviations.shape[0]} recordings, dim {deviations.shape[1]})"
            )
        _, singular_values, vt = np.linalg.svd(
            deviations / np.sqrt(len(gmms)), full_matrices=False
        )
        positive = singular_values > 1e-12 * max(singular_values[0], 1.0)
        if positive.sum() < self.rank:
            raise IvectorError(
                f"rank {self.rank} exceeds numerical rank {int(positive.sum())}"
            )
        components = vt[: self.rank]
        # Deterministic sign: largest-magnitude entry of each axis positive.
        flips = np.sign(components[np.arange(self.rank), np.abs(components).argmax(axis=1)])
        self.components_ = components * flips[:, None]
        self.eigenvalues_ = singular_values[: self.rank] ** 2
        return self

    def transform(self, gmms) -> np.ndarray:
        if not hasattr(self, "components_"):
            raise NotFittedError("this SupervectorPca instance is not fitted yet")
        if isinstance(gmms, DiagonalGmm):
            return (supervector(gmms) - self.ubm_supervector_) @ self.components_.T
        deviations = np.stack([supervector(g) for g in gmms]) - self.ubm_supervector_
        return deviations @ self.components_.T
