"""Seeded random draws used by initializers and corpus generators.

Gaussian variates come from a Box-Muller transform over PCG64 uniforms
rather than the numpy normal generator, so that generated corpora and
matrix initializations are stable across numpy versions and platforms.
"""

from __future__ import annotations

import numpy as np


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def standard_normal(rng: np.random.Generator, shape) -> np.ndarray:
    """Standard-normal draws via Box-Muller on uniform pairs."""
    shape = (shape,) if np.isscalar(shape) else tuple(shape)
    count = int(np.prod(shape)) if shape else 1
    pairs = (count + 1) // 2
    u1 = 1.0 - rng.random(pairs)  # (0, 1], keeps the log finite
    u2 = rng.random(pairs)
    radius = np.sqrt(-2.0 * np.log(u1))
    z = np.concatenate([radius * np.cos(2.0 * np.pi * u2), radius * np.sin(2.0 * np.pi * u2)])
    return z[:count].reshape(shape)


def multivariate_normal(
    rng: np.random.Generator, mean: np.ndarray, covariance: np.ndarray, size: int
) -> np.ndarray:
    """Draws from N(mean, covariance) via the symmetric root of the covariance."""
    mean = np.asarray(mean, dtype=np.float64)
    covariance = np.asarray(covariance, dtype=np.float64)
    eigenvalues, vectors = np.linalg.eigh(covariance)
    if np.any(eigenvalues < -1e-10 * max(abs(eigenvalues).max(), 1.0)):
        raise ValueError("covariance is not positive semi-definite")
    root = (vectors * np.sqrt(np.clip(eigenvalues, 0.0, None))) @ vectors.T
    return mean[None, :] + standard_normal(rng, (size, len(mean))) @ root.T
