"""MFCC extraction with deltas and double deltas.

Per-frame pipeline: Hamming window -> power spectrum (zero-padded DFT) ->
mel triangular filterbank -> log compression -> orthonormal DCT-II, keeping
coefficients 1..num_ceps (the 0th carries only mean intensity and is
dropped). Deltas are least-squares slopes over the full frame sequence,
computed before any VAD masking is applied.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .audio import AudioBuffer, VadMask, frame_signal, num_frames

LOG_ENERGY_FLOOR = 1e-10

STAGE_RAW = "raw"
STAGE_COMPENSATED = "compensated"


class FeatureError(Exception):
    pass


class NoSpeechError(FeatureError):
    """No frames survive the VAD mask (e.g., an all-silence recording)."""


@dataclass(frozen=True)
class MfccConfig:
    frame_length_ms: float = 20.0
    frame_shift_ms: float = 10.0
    num_filters: int = 26
    band_low_hz: float = 300.0
    band_high_hz: float = 3400.0
    num_ceps: int = 14
    delta_span_frames: int = 2
    include_deltas: bool = True
    include_double_deltas: bool = True

    def __post_init__(self):
        if self.num_ceps > self.num_filters:
            raise ValueError(
                f"num_ceps {self.num_ceps} exceeds num_filters {self.num_filters}"
            )
        if self.delta_span_frames < 1:
            raise ValueError("delta_span_frames must be >= 1")
        if self.band_low_hz >= self.band_high_hz:
            raise ValueError("degenerate mel band: low >= high")

    @property
    def dims(self) -> int:
        blocks = 1 + int(self.include_deltas) + int(self.include_double_deltas)
        return self.num_ceps * blocks

    def validate_rate(self, sample_rate: int) -> None:
        if self.band_high_hz > sample_rate / 2:
            raise ValueError(
                f"band_high_hz {self.band_high_hz} exceeds Nyquist "
                f"{sample_rate / 2} at {sample_rate} Hz"
            )


@dataclass(frozen=True)
class FeatureMatrix:
    """Per-recording feature vectors, shape (frames, dims)."""

    vectors: np.ndarray
    frame_length_ms: float
    frame_shift_ms: float
    stage: str = STAGE_RAW
    source_id: str = ""

    def __post_init__(self):
        if self.vectors.ndim != 2:
            raise FeatureError("feature vectors must be a 2-D frames x dims array")
        if not np.all(np.isfinite(self.vectors)):
            raise FeatureError(f"{self.source_id}: non-finite feature values")

    @property
    def n_frames(self) -> int:
        return self.vectors.shape[0]

    @property
    def dims(self) -> int:
        return self.vectors.shape[1]

    def with_vectors(self, vectors: np.ndarray, stage: str | None = None) -> "FeatureMatrix":
        return replace(self, vectors=vectors, stage=stage or self.stage)


def hamming_window(n: int) -> np.ndarray:
    """w[k] = 0.54 - 0.46 cos(2 pi k / (n - 1))."""
    if n < 2:
        raise FeatureError("window length must be >= 2")
    k = np.arange(n)
    return 0.54 - 0.46 * np.cos(2.0 * np.pi * k / (n - 1))


def window_frame(frame: np.ndarray) -> np.ndarray:
    """Apply a Hamming window to one frame of samples."""
    frame = np.asarray(frame, dtype=np.float64)
    return frame * hamming_window(len(frame))


def next_pow2(n: int) -> int:
    p = 1
    while p < n:
        p *= 2
    return p


def power_spectrum(windowed: np.ndarray) -> np.ndarray:
    """Squared DFT magnitudes of bins 0..N/2, N the next power of two.

    Phase is discarded. Accepts a single frame or a (frames, length) array.
    """
    arr = np.asarray(windowed, dtype=np.float64)
    single = arr.ndim == 1
    frames = np.atleast_2d(arr)
    n_fft = next_pow2(frames.shape[1])
    spectrum = np.abs(np.fft.rfft(frames, n=n_fft, axis=1)) ** 2
    return spectrum[0] if single else spectrum


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filter_weights(freqs_hz: np.ndarray, config: MfccConfig) -> np.ndarray:
    """Triangle weights of each filter evaluated at arbitrary frequencies.

    Returns (num_filters, len(freqs)). Centers are equally spaced on the mel
    scale between the band edges; each unit-height triangle spans its two
    neighboring centers, giving the 50% overlap.
    """
    freqs_hz = np.asarray(freqs_hz, dtype=np.float64)
    mel_points = np.linspace(
        hz_to_mel(config.band_low_hz), hz_to_mel(config.band_high_hz), config.num_filters + 2
    )
    edges = mel_to_hz(mel_points)
    lo, center, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs_hz[None, :] - lo) / (center - lo)
    falling = (hi - freqs_hz[None, :]) / (hi - center)
    return np.maximum(0.0, np.minimum(rising, falling))


def mel_filterbank_matrix(config: MfccConfig, n_fft: int, sample_rate: int) -> np.ndarray:
    """Filterbank applied to power-spectrum bins 0..n_fft/2."""
    config.validate_rate(sample_rate)
    bin_freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    return mel_filter_weights(bin_freqs, config)


def mel_filterbank(spectrum: np.ndarray, config: MfccConfig, n_fft: int, sample_rate: int) -> np.ndarray:
    """Dot each power spectrum with the triangular filters."""
    weights = mel_filterbank_matrix(config, n_fft, sample_rate)
    return np.asarray(spectrum, dtype=np.float64) @ weights.T


def log_compress(energies: np.ndarray, floor: float = LOG_ENERGY_FLOOR) -> np.ndarray:
    """Natural log with a floor so silent frames stay finite."""
    return np.log(np.maximum(np.asarray(energies, dtype=np.float64), floor))


def dct_matrix(n: int) -> np.ndarray:
    """Orthonormal DCT-II basis, rows are coefficients 0..n-1."""
    k = np.arange(n)[:, None]
    m = np.arange(n)[None, :]
    basis = np.cos(np.pi * k * (2 * m + 1) / (2 * n)) * np.sqrt(2.0 / n)
    basis[0, :] /= np.sqrt(2.0)
    return basis


def dct_cepstra(log_energies: np.ndarray, num_ceps: int) -> np.ndarray:
    """Orthonormal DCT-II coefficients 1..num_ceps (coefficient 0 discarded)."""
    log_energies = np.asarray(log_energies, dtype=np.float64)
    n = log_energies.shape[-1]
    if num_ceps > n:
        raise FeatureError(f"num_ceps {num_ceps} exceeds filter count {n}")
    basis = dct_matrix(n)
    return log_energies @ basis[1 : num_ceps + 1].T


def deltas(track: np.ndarray, span: int = 2) -> np.ndarray:
    """Per-frame least-squares slope over frames t-span..t+span.

    Equivalent to sum_d d*(x[t+d]-x[t-d]) / (2*sum_d d^2). Edge frames use
    replicated first/last values so the frame count is preserved. Works on a
    (frames,) track or a (frames, dims) matrix.
    """
    track = np.asarray(track, dtype=np.float64)
    n = track.shape[0]
    if n < 2 * span + 1:
        raise FeatureError(
            f"track of {n} frames too short for delta span {span} "
            f"(needs >= {2 * span + 1})"
        )
    padded = np.concatenate(
        [np.repeat(track[:1], span, axis=0), track, np.repeat(track[-1:], span, axis=0)],
        axis=0,
    )
    num = np.zeros_like(track)
    for d in range(1, span + 1):
        num += d * (padded[span + d : span + d + n] - padded[span - d : span - d + n])
    return num / (2.0 * sum(d * d for d in range(1, span + 1)))


def static_mfcc(buffer: AudioBuffer, config: MfccConfig) -> np.ndarray:
    """MFCC coefficients 1..num_ceps for every frame, no masking."""
    config.validate_rate(buffer.sample_rate)
    frame_length = int(round(buffer.sample_rate * config.frame_length_ms / 1000.0))
    frame_shift = int(round(buffer.sample_rate * config.frame_shift_ms / 1000.0))
    frames = frame_signal(buffer.samples, frame_length, frame_shift)
    windowed = frames * hamming_window(frame_length)[None, :]
    n_fft = next_pow2(frame_length)
    spectrum = np.abs(np.fft.rfft(windowed, n=n_fft, axis=1)) ** 2
    energies = spectrum @ mel_filterbank_matrix(config, n_fft, buffer.sample_rate).T
    return dct_cepstra(log_compress(energies), config.num_ceps)


def extract_features(buffer: AudioBuffer, mask: VadMask, config: MfccConfig) -> FeatureMatrix:
    """Full feature pipeline for one recording.

    Deltas and double deltas are computed over the complete frame sequence,
    then non-speech frames are dropped per the mask.
    """
    if (mask.frame_length_ms, mask.frame_shift_ms) != (
        config.frame_length_ms,
        config.frame_shift_ms,
    ):
        raise FeatureError(
            f"{buffer.source_id}: VAD framing "
            f"({mask.frame_length_ms}/{mask.frame_shift_ms} ms) does not match "
            f"feature framing ({config.frame_length_ms}/{config.frame_shift_ms} ms)"
        )
    static = static_mfcc(buffer, config)
    frame_length = int(round(buffer.sample_rate * config.frame_length_ms / 1000.0))
    frame_shift = int(round(buffer.sample_rate * config.frame_shift_ms / 1000.0))
    expected = num_frames(len(buffer.samples), frame_length, frame_shift)
    if len(mask.frame_flags) != expected:
        raise FeatureError(
            f"{buffer.source_id}: mask has {len(mask.frame_flags)} flags, "
            f"extractor produces {expected} frames"
        )

    blocks = [static]
    if config.include_deltas or config.include_double_deltas:
        d1 = deltas(static, config.delta_span_frames)
        if config.include_deltas:
            blocks.append(d1)
        if config.include_double_deltas:
            blocks.append(deltas(d1, config.delta_span_frames))
    vectors = np.concatenate(blocks, axis=1)

    kept = vectors[mask.frame_flags]
    if kept.shape[0] == 0:
        raise NoSpeechError(f"{buffer.source_id}: no speech frames after masking")
    return FeatureMatrix(
        vectors=kept,
        frame_length_ms=config.frame_length_ms,
        frame_shift_ms=config.frame_shift_ms,
        stage=STAGE_RAW,
        source_id=buffer.source_id,
    )
