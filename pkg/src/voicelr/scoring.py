"""Specific-source scoring of a questioned recording against a speaker model.

The score is the mean per-frame natural-log likelihood ratio of the
speaker model over the UBM. It is deliberately not called a likelihood
ratio: it must pass through calibration before being reported.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .features import FeatureMatrix
from .gmm import DiagonalGmm, GmmError


@dataclass(frozen=True)
class RecordingScore:
    value: float
    n_frames: int

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise ValueError("score is not finite")
        if self.n_frames < 1:
            raise ValueError("score computed over zero frames")


def _check_shapes(speaker_model: DiagonalGmm, ubm: DiagonalGmm) -> None:
    if speaker_model.means_.shape != ubm.means_.shape:
        raise GmmError(
            f"speaker model shape {speaker_model.means_.shape} does not match "
            f"UBM shape {ubm.means_.shape}"
        )


def frame_log_lr(speaker_model: DiagonalGmm, ubm: DiagonalGmm, x) -> float:
    """Natural-log likelihood ratio for a single feature vector."""
    _check_shapes(speaker_model, ubm)
    return speaker_model.log_density(x) - ubm.log_density(x)


def score_recording(
    speaker_model: DiagonalGmm, ubm: DiagonalGmm, questioned: FeatureMatrix
) -> RecordingScore:
    """Mean per-frame log LR over all frames of the questioned recording."""
    _check_shapes(speaker_model, ubm)
    if questioned.n_frames == 0:
        raise ValueError("empty feature matrix")
    llrs = speaker_model.log_density(questioned.vectors) - ubm.log_density(
        questioned.vectors
    )
    return RecordingScore(value=float(llrs.mean()), n_frames=questioned.n_frames)
