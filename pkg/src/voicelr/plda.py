"""Two-covariance PLDA: common-source likelihood ratios for embedding pairs.

The model holds a between-speaker and a (speaker-independent) within-speaker
covariance. A pair is scored as the joint density of the stacked pair under
the same-speaker covariance structure over the product of its marginals.
Scalar discrete-sum and quadrature scorers are included as independent
cross-checks of the closed form.
"""

from __future__ import annotations

import numpy as np
from scipy.integrate import quad
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError


class PldaError(Exception):
    pass


def _gaussian_log_density(x: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    """Multivariate normal log density for rows of x; solve-based, no inverse."""
    x = np.atleast_2d(x)
    centered = x - mean
    sign, logdet = np.linalg.slogdet(cov)
    if sign <= 0:
        raise PldaError("covariance is not positive definite")
    solved = np.linalg.solve(cov, centered.T)
    quad_form = (centered.T * solved).sum(axis=0)
    return -0.5 * (len(mean) * np.log(2.0 * np.pi) + logdet + quad_form)


def _scalar_normal_pdf(x, mean, variance):
    return np.exp(-0.5 * (x - mean) ** 2 / variance) / np.sqrt(2.0 * np.pi * variance)


class TwoCovariancePlda(BaseEstimator):
    """Between/within-covariance Gaussian pair model over embeddings.

    fit takes speaker-labeled embeddings: the within covariance pools
    deviations from each speaker's own mean (population divisor over the
    pooled deviations; single-recording speakers contribute nothing), and
    the between covariance is the population covariance of the speaker
    means. score_pairs returns natural-log likelihood ratios, which are
    treated as uncalibrated scores downstream.
    """

    def __init__(self, within_floor: float = 1e-8):
        self.within_floor = within_floor

    def fit(self, X, y) -> "TwoCovariancePlda":
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2:
            raise PldaError("embeddings must be a 2-D array")
        groups: dict = {}
        for row, label in zip(X, y):
            groups.setdefault(label, []).append(row)
        if len(groups) < 2:
            raise PldaError("need at least 2 speakers")

        dim = X.shape[1]
        speaker_means = np.stack([np.mean(rows, axis=0) for rows in groups.values()])
        self.mean_ = speaker_means.mean(axis=0)
        centered = speaker_means - self.mean_
        self.between_ = centered.T @ centered / len(groups)

        deviations = [
            np.stack(rows) - np.mean(rows, axis=0)
            for rows in groups.values()
            if len(rows) >= 2
        ]
        if not deviations:
            raise PldaError("no speaker has 2 or more embeddings")
        pooled = np.concatenate(deviations)
        within = pooled.T @ pooled / pooled.shape[0]

        # Identical-recording degenerate inputs give a zero matrix; floor it
        # to keep the model invertible.
        eigenvalues = np.linalg.eigvalsh(within)
        if eigenvalues.min() <= 0:
            scale = np.trace(within) / dim
            if scale <= 0:
                scale = max(np.trace(self.between_) / dim, 1.0)
            within = within + self.within_floor * scale * np.eye(dim)
            if np.linalg.eigvalsh(within).min() <= 0:
                within = within + self.within_floor * np.eye(dim)
        self.within_ = within
        self.dim_ = dim
        return self

    @classmethod
    def from_parameters(cls, mean, within, between) -> "TwoCovariancePlda":
        model = cls()
        model.mean_ = np.atleast_1d(np.asarray(mean, dtype=np.float64))
        model.within_ = np.atleast_2d(np.asarray(within, dtype=np.float64))
        model.between_ = np.atleast_2d(np.asarray(between, dtype=np.float64))
        model.dim_ = model.mean_.shape[0]
        return model

    def _check_fitted(self):
        if not hasattr(self, "within_"):
            raise NotFittedError("this TwoCovariancePlda instance is not fitted yet")

    def score_pairs(self, v_q, v_k) -> np.ndarray:
        """Natural-log LR for each row pair (v_q[i], v_k[i])."""
        self._check_fitted()
        v_q = np.atleast_2d(np.asarray(v_q, dtype=np.float64))
        v_k = np.atleast_2d(np.asarray(v_k, dtype=np.float64))
        if v_q.shape != v_k.shape or v_q.shape[1] != self.dim_:
            raise PldaError(
                f"pair shapes {v_q.shape} / {v_k.shape} do not match model dim {self.dim_}"
            )
        total = self.within_ + self.between_
        joint_cov = np.block([[total, self.between_], [self.between_, total]])
        joint_mean = np.concatenate([self.mean_, self.mean_])
        stacked = np.concatenate([v_q, v_k], axis=1)
        log_num = _gaussian_log_density(stacked, joint_mean, joint_cov)
        log_den = _gaussian_log_density(v_q, self.mean_, total) + _gaussian_log_density(
            v_k, self.mean_, total
        )
        return log_num - log_den

    def log_likelihood_ratio(self, v_q, v_k) -> float:
        """Natural-log LR for a single pair of embeddings."""
        return float(self.score_pairs(np.atleast_2d(v_q), np.atleast_2d(v_k))[0])


def scalar_log_lr(mu_b: float, sigma_w2: float, sigma_b2: float, v_q: float, v_k: float) -> float:
    """Closed-form scalar log LR (the 1-D case of the multivariate model)."""
    model = TwoCovariancePlda.from_parameters([mu_b], [[sigma_w2]], [[sigma_b2]])
    return model.log_likelihood_ratio([v_q], [v_k])


def discrete_mean_log_lr(
    speaker_means, sigma_w2: float, v_q: float, v_k: float
) -> float:
    """Scalar log LR by averaging over the sampled speaker means directly.

    Numerator: mean over speakers i of f(v_q|mu_i) f(v_k|mu_i). Denominator:
    mean over i of f(v_k|mu_i) times the mean of f(v_q|mu_j) over the other
    speakers j != i. Serves as a cross-check that converges to the
    closed-form integral as the number of speakers grows.
    """
    means = np.asarray(speaker_means, dtype=np.float64)
    if means.size < 2:
        raise PldaError("need at least 2 speaker means")
    f_q = _scalar_normal_pdf(v_q, means, sigma_w2)
    f_k = _scalar_normal_pdf(v_k, means, sigma_w2)
    numerator = np.mean(f_q * f_k)
    other_mean_q = (f_q.sum() - f_q) / (means.size - 1)
    denominator = np.mean(f_k * other_mean_q)
    return float(np.log(numerator) - np.log(denominator))


def quadrature_log_lr(
    mu_b: float, sigma_w2: float, sigma_b2: float, v_q: float, v_k: float
) -> float:
    """Scalar log LR by numerical integration over the latent speaker mean.

    Integrates numerator and denominator over mu in [mu_b - 10 sigma_b,
    mu_b + 10 sigma_b]; independent of the closed-form evaluation path.
    """
    sigma_b = np.sqrt(sigma_b2)
    lo, hi = mu_b - 10.0 * sigma_b, mu_b + 10.0 * sigma_b

    def joint(mu):
        return (
            _scalar_normal_pdf(v_q, mu, sigma_w2)
            * _scalar_normal_pdf(v_k, mu, sigma_w2)
            * _scalar_normal_pdf(mu, mu_b, sigma_b2)
        )

    def marginal(v):
        def integrand(mu):
            return _scalar_normal_pdf(v, mu, sigma_w2) * _scalar_normal_pdf(mu, mu_b, sigma_b2)

        return quad(integrand, lo, hi, epsabs=1e-14, epsrel=1e-11, limit=400)[0]

    numerator = quad(joint, lo, hi, epsabs=1e-14, epsrel=1e-11, limit=400)[0]
    return float(np.log(numerator) - np.log(marginal(v_q)) - np.log(marginal(v_k)))
