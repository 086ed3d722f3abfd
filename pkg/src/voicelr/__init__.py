"""Forensic voice comparison: calibrated likelihood ratios for recording pairs.

The package covers the full chain: WAV ingest and energy VAD, MFCC features
with deltas, feature-domain mismatch compensation, GMM-UBM scoring,
i-vector / PLDA scoring, score-to-LR calibration, and Cllr / Tippett
validation, orchestrated by a manifest-driven CLI.
"""

from .audio import AudioBuffer, VadMask, energy_vad, read_wav
from .calibration import ScoreCalibrator, fit_logistic, fit_pooled_gaussian
from .cldf import CldfTransform
from .config import PipelineConfig
from .features import FeatureMatrix, MfccConfig, extract_features
from .gmm import DiagonalGmm, map_adapt_means
from .ivector import (
    BaumWelchStats,
    Embedding,
    EmbeddingWhitener,
    SupervectorPca,
    TotalVariability,
    accumulate_stats,
)
from .manifest import Manifest, load_manifest
from .normalize import WarpConfig, cms, cms_local, cmvn, cmvn_local, feature_warp
from .plda import TwoCovariancePlda, discrete_mean_log_lr, quadrature_log_lr, scalar_log_lr
from .scoring import RecordingScore, frame_log_lr, score_recording
from .validation import TrialSet, ValidationReport, compute_cllr, render_tippett_svg, tippett_points

__version__ = "0.1.0"

__all__ = [
    "AudioBuffer",
    "BaumWelchStats",
    "CldfTransform",
    "DiagonalGmm",
    "Embedding",
    "EmbeddingWhitener",
    "FeatureMatrix",
    "Manifest",
    "MfccConfig",
    "PipelineConfig",
    "RecordingScore",
    "ScoreCalibrator",
    "SupervectorPca",
    "TotalVariability",
    "TrialSet",
    "TwoCovariancePlda",
    "VadMask",
    "ValidationReport",
    "WarpConfig",
    "accumulate_stats",
    "cms",
    "cms_local",
    "cmvn",
    "cmvn_local",
    "compute_cllr",
    "discrete_mean_log_lr",
    "energy_vad",
    "extract_features",
    "feature_warp",
    "fit_logistic",
    "fit_pooled_gaussian",
    "frame_log_lr",
    "load_manifest",
    "map_adapt_means",
    "quadrature_log_lr",
    "read_wav",
    "render_tippett_svg",
    "scalar_log_lr",
    "score_recording",
    "tippett_points",
]
