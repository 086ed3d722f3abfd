"""WAV ingest and energy-based voice-activity detection."""

from __future__ import annotations

import wave
from dataclasses import dataclass

import numpy as np

MIN_SAMPLE_RATE = 8000


class AudioError(Exception):
    """Base class for audio ingest failures."""


class UnsupportedEncodingError(AudioError):
    pass


class MultiChannelError(AudioError):
    pass


class TruncatedFileError(AudioError):
    pass


class SampleRateError(AudioError):
    pass


class FramingError(AudioError):
    """Buffer too short for the requested framing."""


@dataclass(frozen=True)
class AudioBuffer:
    """Mono PCM audio normalized to [-1, 1].

    samples are float64; sample_rate is the rate read from the container,
    never silently resampled.
    """

    samples: np.ndarray
    sample_rate: int
    source_id: str

    def __post_init__(self):
        if len(self.samples) == 0:
            raise AudioError(f"{self.source_id}: empty audio buffer")
        if not np.all(np.isfinite(self.samples)):
            raise AudioError(f"{self.source_id}: non-finite samples")

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class VadMask:
    """Per-frame speech flags, aligned with the feature extractor's framing."""

    frame_flags: np.ndarray
    frame_length_ms: float
    frame_shift_ms: float

    def __len__(self) -> int:
        return len(self.frame_flags)


def num_frames(n_samples: int, frame_length: int, frame_shift: int) -> int:
    """Frame count for a buffer: floor((n - length) / shift) + 1."""
    if n_samples < frame_length:
        return 0
    return (n_samples - frame_length) // frame_shift + 1


def frame_signal(samples: np.ndarray, frame_length: int, frame_shift: int) -> np.ndarray:
    """Slice a 1-D signal into overlapping frames, shape (n_frames, frame_length)."""
    n = num_frames(len(samples), frame_length, frame_shift)
    if n == 0:
        raise FramingError(
            f"buffer of {len(samples)} samples shorter than one "
            f"{frame_length}-sample frame"
        )
    idx = np.arange(frame_length)[None, :] + frame_shift * np.arange(n)[:, None]
    return samples[idx]


def read_wav(path) -> AudioBuffer:
    """Read a mono linear-PCM RIFF/WAV file (8/16/24-bit).

    Integer samples are scaled by the type's maximum magnitude (2^(bits-1))
    so output lies in [-1, 1]. 8-bit WAV is unsigned and is re-centered.
    """
    try:
        with wave.open(str(path), "rb") as wav:
            if wav.getcomptype() != "NONE":
                raise UnsupportedEncodingError(
                    f"{path}: compression {wav.getcomptype()!r} not supported, "
                    "expected linear PCM"
                )
            n_channels = wav.getnchannels()
            if n_channels != 1:
                raise MultiChannelError(
                    f"{path}: {n_channels} channels, expected mono"
                )
            sample_width = wav.getsampwidth()
            if sample_width not in (1, 2, 3):
                raise UnsupportedEncodingError(
                    f"{path}: {8 * sample_width}-bit PCM not supported "
                    "(expected 8, 16, or 24-bit)"
                )
            sample_rate = wav.getframerate()
            n_declared = wav.getnframes()
            raw = wav.readframes(n_declared)
    except wave.Error as exc:
        raise UnsupportedEncodingError(f"{path}: {exc}") from exc
    except EOFError as exc:
        raise TruncatedFileError(f"{path}: unexpected end of file") from exc

    if len(raw) < n_declared * sample_width:
        raise TruncatedFileError(
            f"{path}: header declares {n_declared} frames but only "
            f"{len(raw) // sample_width} are present"
        )
    if sample_rate < MIN_SAMPLE_RATE:
        raise SampleRateError(
            f"{path}: sample rate {sample_rate} Hz below the {MIN_SAMPLE_RATE} Hz "
            "minimum; resample upstream"
        )

    if sample_width == 1:
        samples = (np.frombuffer(raw, dtype=np.uint8).astype(np.float64) - 128.0) / 128.0
    elif sample_width == 2:
        samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    else:
        b = np.frombuffer(raw, dtype=np.uint8).reshape(-1, 3)
        as_int = (
            b[:, 0].astype(np.int32)
            | (b[:, 1].astype(np.int32) << 8)
            | (b[:, 2].astype(np.int32) << 16)
        )
        as_int = np.where(as_int >= 1 << 23, as_int - (1 << 24), as_int)
        samples = as_int.astype(np.float64) / float(1 << 23)

    return AudioBuffer(samples=samples, sample_rate=sample_rate, source_id=str(path))


def frame_rms(buffer: AudioBuffer, frame_length_ms: float, frame_shift_ms: float) -> np.ndarray:
    """Per-frame root-mean-square amplitude."""
    frame_length = int(round(buffer.sample_rate * frame_length_ms / 1000.0))
    frame_shift = int(round(buffer.sample_rate * frame_shift_ms / 1000.0))
    frames = frame_signal(buffer.samples, frame_length, frame_shift)
    return np.sqrt(np.mean(frames**2, axis=1))


def energy_vad(
    buffer: AudioBuffer,
    frame_length_ms: float = 20.0,
    frame_shift_ms: float = 10.0,
    threshold_db_below_peak: float = 30.0,
) -> VadMask:
    """Flag frames whose RMS level is within threshold dB of the peak frame RMS.

    The threshold is relative to the recording's own peak, so the mask is
    invariant to global gain. An all-zero recording yields an all-false mask
    (the degenerate peak of 0 flags nothing) so pipelines can skip it.
    """
    rms = frame_rms(buffer, frame_length_ms, frame_shift_ms)
    peak = rms.max()
    if peak == 0.0:
        flags = np.zeros(len(rms), dtype=bool)
    else:
        flags = rms >= peak * 10.0 ** (-threshold_db_below_peak / 20.0)
    return VadMask(
        frame_flags=flags,
        frame_length_ms=frame_length_ms,
        frame_shift_ms=frame_shift_ms,
    )


def read_vad_segments(path) -> list[tuple[float, float]]:
    """Parse a manual-VAD sidecar: one `start end` pair in seconds per line.

    Blank lines and lines starting with `#` are skipped.
    """
    segments = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise AudioError(
                    f"{path}:{lineno}: expected 'start end' in seconds, got {line!r}"
                )
            start, end = float(parts[0]), float(parts[1])
            if end <= start:
                raise AudioError(
                    f"{path}:{lineno}: segment end {end} not after start {start}"
                )
            segments.append((start, end))
    return segments


def segments_to_mask(
    segments: list[tuple[float, float]],
    buffer: AudioBuffer,
    frame_length_ms: float,
    frame_shift_ms: float,
) -> VadMask:
    """Build a mask from manual segments; a frame is speech iff its center
    falls inside a segment. Supersedes energy_vad when a sidecar is present."""
    frame_length = int(round(buffer.sample_rate * frame_length_ms / 1000.0))
    frame_shift = int(round(buffer.sample_rate * frame_shift_ms / 1000.0))
    n = num_frames(len(buffer.samples), frame_length, frame_shift)
    if n == 0:
        raise FramingError(
            f"{buffer.source_id}: buffer shorter than one frame"
        )
    centers = (np.arange(n) * frame_shift + frame_length / 2.0) / buffer.sample_rate
    flags = np.zeros(n, dtype=bool)
    for start, end in segments:
        flags |= (centers >= start) & (centers <= end)
    return VadMask(
        frame_flags=flags,
        frame_length_ms=frame_length_ms,
        frame_shift_ms=frame_shift_ms,
    )
