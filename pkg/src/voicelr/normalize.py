"""Feature-domain mismatch compensation: CMS, CMVN, and feature warping.

All three operate on post-delta feature matrices (the deltas were computed
on raw features upstream) and tag their output as compensated.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import erfc

from .features import STAGE_COMPENSATED, FeatureMatrix


@dataclass(frozen=True)
class WarpConfig:
    half_window_frames: int = 150

    def __post_init__(self):
        if self.half_window_frames < 1:
            raise ValueError("half_window_frames must be >= 1")


def cms(features: FeatureMatrix) -> FeatureMatrix:
    """Subtract each dimension's mean over time (additive-channel removal)."""
    vectors = features.vectors - features.vectors.mean(axis=0, keepdims=True)
    return features.with_vectors(vectors, stage=STAGE_COMPENSATED)


def cmvn(features: FeatureMatrix) -> FeatureMatrix:
    """Subtract the mean and scale each dimension to unit variance.

    Population form (divide by N). A zero-variance dimension carries no
    information; it is zeroed out with a warning rather than divided by 0.
    """
    if features.n_frames < 2:
        raise ValueError("CMVN needs at least 2 frames")
    centered = features.vectors - features.vectors.mean(axis=0, keepdims=True)
    std = features.vectors.std(axis=0)
    # A constant column's floating-point std is tiny but rarely exactly 0;
    # test for constancy directly.
    degenerate = np.all(features.vectors == features.vectors[:1], axis=0) | (std == 0.0)
    if degenerate.any():
        warnings.warn(
            f"{features.source_id}: zero-variance dimensions "
            f"{np.flatnonzero(degenerate).tolist()} zeroed under CMVN"
        )
        std = np.where(degenerate, 1.0, std)
    normalized = centered / std
    normalized[:, degenerate] = 0.0
    return features.with_vectors(normalized, stage=STAGE_COMPENSATED)


def cms_local(features: FeatureMatrix, half_window_frames: int = 150) -> FeatureMatrix:
    """CMS against a sliding-window mean (edge-truncated windows)."""
    vectors = features.vectors
    means = _sliding_moments(vectors, half_window_frames)[0]
    return features.with_vectors(vectors - means, stage=STAGE_COMPENSATED)


def cmvn_local(features: FeatureMatrix, half_window_frames: int = 150) -> FeatureMatrix:
    """CMVN against sliding-window moments (edge-truncated windows)."""
    if features.n_frames < 2:
        raise ValueError("CMVN needs at least 2 frames")
    vectors = features.vectors
    means, variances = _sliding_moments(vectors, half_window_frames)
    std = np.sqrt(variances)
    degenerate = std == 0.0
    if degenerate.any():
        warnings.warn(
            f"{features.source_id}: locally constant values zeroed under CMVN"
        )
        std = np.where(degenerate, 1.0, std)
    out = (vectors - means) / std
    out[degenerate] = 0.0
    return features.with_vectors(out, stage=STAGE_COMPENSATED)


def _sliding_moments(vectors: np.ndarray, half_window: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-frame mean and population variance over the truncated window."""
    n = vectors.shape[0]
    padded = np.concatenate([np.zeros((1, vectors.shape[1])), np.cumsum(vectors, axis=0)])
    padded_sq = np.concatenate(
        [np.zeros((1, vectors.shape[1])), np.cumsum(vectors**2, axis=0)]
    )
    lo = np.maximum(np.arange(n) - half_window, 0)
    hi = np.minimum(np.arange(n) + half_window + 1, n)
    sizes = (hi - lo)[:, None].astype(np.float64)
    sums = padded[hi] - padded[lo]
    sums_sq = padded_sq[hi] - padded_sq[lo]
    means = sums / sizes
    variances = np.maximum(sums_sq / sizes - means**2, 0.0)
    return means, variances



# Coefficients of Acklam's rational approximation to the standard-normal
# quantile function (relative error < 1.15e-9 before refinement).
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)

_P_LOW = 0.02425


def _normal_cdf(x):
    return 0.5 * erfc(-x / np.sqrt(2.0))


def normal_quantile(p):
    """Inverse standard-normal CDF.

    Rational approximation with one Newton refinement step; absolute error
    well under 1e-9 across p in [1e-8, 1 - 1e-8].
    """
    p = np.asarray(p, dtype=np.float64)
    if np.any((p <= 0.0) | (p >= 1.0)):
        raise ValueError("normal_quantile requires 0 < p < 1")
    x = np.empty_like(p)

    low = p < _P_LOW
    high = p > 1.0 - _P_LOW
    mid = ~(low | high)

    if low.any():
        q = np.sqrt(-2.0 * np.log(p[low]))
        x[low] = (((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / (
            (((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0
        )
    if high.any():
        q = np.sqrt(-2.0 * np.log(1.0 - p[high]))
        x[high] = -(((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / (
            (((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0
        )
    if mid.any():
        q = p[mid] - 0.5
        r = q * q
        x[mid] = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q / (
            ((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0
        )

    # One Newton step against the exact CDF.
    density = np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)
    x -= (_normal_cdf(x) - p) / density
    return x if x.ndim else float(x)


def _window_ranks(track: np.ndarray, half_window: int) -> tuple[np.ndarray, np.ndarray]:
    """Rank of each value within its (edge-truncated) sliding window.

    Rank r counts values strictly below the current one plus tied values at
    earlier-or-equal frame indices (stable tie-breaking), so 1 <= r <= M.
    Returns (ranks, window_sizes).
    """
    n = len(track)
    ranks = np.empty(n, dtype=np.int64)
    sizes = np.empty(n, dtype=np.int64)
    full = 2 * half_window + 1

    if n >= full:
        windows = np.lib.stride_tricks.sliding_window_view(track, full)
        center = track[half_window : n - half_window, None]
        below = (windows < center).sum(axis=1)
        tied_before = (windows[:, : half_window + 1] == center).sum(axis=1)
        ranks[half_window : n - half_window] = below + tied_before
        sizes[half_window : n - half_window] = full
        edges = list(range(half_window)) + list(range(n - half_window, n))
    else:
        edges = list(range(n))

    for t in edges:
        lo, hi = max(0, t - half_window), min(n, t + half_window + 1)
        window = track[lo:hi]
        ranks[t] = (window < track[t]).sum() + (window[: t - lo + 1] == track[t]).sum()
        sizes[t] = hi - lo
    return ranks, sizes


def feature_warp(features: FeatureMatrix, config: WarpConfig = WarpConfig()) -> FeatureMatrix:
    """Map each dimension onto a standard Gaussian via sliding-window ranks.

    Per frame, the value's rank r within the window of up to
    2*half_window+1 values (truncated at the track edges, ties broken by
    frame order) gives the empirical CDF point p = (r - 0.5) / M, and the
    output is the standard-normal quantile at p.
    """
    if features.n_frames < 2:
        raise ValueError("feature warping needs at least 2 frames")
    warped = np.empty_like(features.vectors)
    for dim in range(features.dims):
        ranks, sizes = _window_ranks(features.vectors[:, dim], config.half_window_frames)
        p = (ranks - 0.5) / sizes
        warped[:, dim] = normal_quantile(p)
    return features.with_vectors(warped, stage=STAGE_COMPENSATED)
