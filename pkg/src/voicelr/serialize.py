"""Versioned binary persistence for models and features, plus CSV/text outputs.

Every binary artifact shares one header layout: 4 magic bytes, a uint32
format version, the 32-byte SHA-256 digest of the pipeline config that
produced it, and an int64 seed, followed by the type-specific payload (all
integers and floats little-endian). Loading with a mismatched config digest
warns loudly rather than failing, so artifacts remain inspectable.
"""

from __future__ import annotations

import hashlib
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cldf import CldfTransform
from .features import FeatureMatrix
from .gmm import DiagonalGmm
from .ivector import BaumWelchStats, EmbeddingWhitener, TotalVariability
from .plda import TwoCovariancePlda

VERSION = 1

MAGIC_FEATURES = b"VLRF"
MAGIC_GMM = b"VLRG"
MAGIC_STATS = b"VLRS"
MAGIC_TMATRIX = b"VLRT"
MAGIC_WHITENER = b"VLRW"
MAGIC_CLDF = b"VLRL"
MAGIC_PLDA = b"VLRP"

NULL_DIGEST = b"\x00" * 32


class SerializationError(Exception):
    pass


@dataclass(frozen=True)
class ArtifactHeader:
    magic: bytes
    version: int
    config_digest: bytes
    seed: int


def _coerce_digest(config_digest) -> bytes:
    if config_digest is None:
        return NULL_DIGEST
    if isinstance(config_digest, str):
        return bytes.fromhex(config_digest)
    if len(config_digest) != 32:
        raise SerializationError("config digest must be 32 bytes")
    return bytes(config_digest)


def _write_header(fh, magic: bytes, config_digest, seed: int) -> None:
    fh.write(magic)
    fh.write(struct.pack("<I", VERSION))
    fh.write(_coerce_digest(config_digest))
    fh.write(struct.pack("<q", seed))


def _read_header(fh, expected_magic: bytes, path) -> ArtifactHeader:
    magic = fh.read(4)
    if magic != expected_magic:
        raise SerializationError(
            f"{path}: bad magic {magic!r}, expected {expected_magic!r}"
        )
    (version,) = struct.unpack("<I", fh.read(4))
    if version != VERSION:
        raise SerializationError(f"{path}: unsupported format version {version}")
    digest = fh.read(32)
    (seed,) = struct.unpack("<q", fh.read(8))
    return ArtifactHeader(magic=magic, version=version, config_digest=digest, seed=seed)


def _check_digest(header: ArtifactHeader, expected_digest, path) -> None:
    if expected_digest is None:
        return
    expected = _coerce_digest(expected_digest)
    if header.config_digest != expected:
        warnings.warn(
            f"{path}: artifact was produced under config "
            f"{header.config_digest.hex()[:12]}..., expected "
            f"{expected.hex()[:12]}...; results may not be comparable"
        )


def _write_string(fh, text: str) -> None:
    raw = text.encode("utf-8")
    fh.write(struct.pack("<H", len(raw)))
    fh.write(raw)


def _read_string(fh) -> str:
    (length,) = struct.unpack("<H", fh.read(2))
    return fh.read(length).decode("utf-8")


def _write_array(fh, array: np.ndarray, dtype: str) -> None:
    fh.write(np.ascontiguousarray(array, dtype=dtype).tobytes())


def _read_array(fh, dtype: str, count: int, path) -> np.ndarray:
    itemsize = np.dtype(dtype).itemsize
    raw = fh.read(count * itemsize)
    if len(raw) != count * itemsize:
        raise SerializationError(f"{path}: truncated payload")
    return np.frombuffer(raw, dtype=dtype).copy()


# -- feature matrices --------------------------------------------------------

_STAGE_CODES = {"raw": 0, "compensated": 1}
_STAGE_NAMES = {code: name for name, code in _STAGE_CODES.items()}


def save_features(path, features: FeatureMatrix, config_digest=None, seed: int = 0) -> None:
    path = Path(path)
    with open(path, "wb") as fh:
        _write_header(fh, MAGIC_FEATURES, config_digest, seed)
        fh.write(struct.pack("<B", _STAGE_CODES[features.stage]))
        fh.write(struct.pack("<dd", features.frame_length_ms, features.frame_shift_ms))
        fh.write(struct.pack("<II", features.dims, features.n_frames))
        _write_string(fh, features.source_id)
        _write_array(fh, features.vectors, "<f4")
    sidecar = [
        f"source_id: {features.source_id}",
        f"stage: {features.stage}",
        f"frames: {features.n_frames}",
        f"dims: {features.dims}",
        f"frame_length_ms: {features.frame_length_ms}",
        f"frame_shift_ms: {features.frame_shift_ms}",
        f"config: {_coerce_digest(config_digest).hex()}",
        f"seed: {seed}",
    ]
    path.with_suffix(path.suffix + ".txt").write_text("\n".join(sidecar) + "\n")


def load_features(path, expected_digest=None) -> FeatureMatrix:
    path = Path(path)
    with open(path, "rb") as fh:
        header = _read_header(fh, MAGIC_FEATURES, path)
        _check_digest(header, expected_digest, path)
        (stage_code,) = struct.unpack("<B", fh.read(1))
        frame_length_ms, frame_shift_ms = struct.unpack("<dd", fh.read(16))
        dims, frames = struct.unpack("<II", fh.read(8))
        source_id = _read_string(fh)
        vectors = _read_array(fh, "<f4", dims * frames, path).astype(np.float64)
    return FeatureMatrix(
        vectors=vectors.reshape(frames, dims),
        frame_length_ms=frame_length_ms,
        frame_shift_ms=frame_shift_ms,
        stage=_STAGE_NAMES[stage_code],
        source_id=source_id,
    )


# -- GMMs ---------------------------------------------------------------------


def gmm_parameter_bytes(gmm: DiagonalGmm) -> bytes:
    g, m = gmm.means_.shape
    return (
        struct.pack("<II", g, m)
        + np.ascontiguousarray(gmm.weights_, dtype="<f8").tobytes()
        + np.ascontiguousarray(gmm.means_, dtype="<f8").tobytes()
        + np.ascontiguousarray(gmm.variances_, dtype="<f8").tobytes()
    )


def gmm_digest(gmm: DiagonalGmm) -> bytes:
    return hashlib.sha256(gmm_parameter_bytes(gmm)).digest()


def save_gmm(path, gmm: DiagonalGmm, config_digest=None, seed: int = 0) -> None:
    with open(path, "wb") as fh:
        _write_header(fh, MAGIC_GMM, config_digest, seed)
        fh.write(gmm_parameter_bytes(gmm))


def load_gmm(path, expected_digest=None) -> DiagonalGmm:
    path = Path(path)
    with open(path, "rb") as fh:
        header = _read_header(fh, MAGIC_GMM, path)
        _check_digest(header, expected_digest, path)
        g, m = struct.unpack("<II", fh.read(8))
        weights = _read_array(fh, "<f8", g, path)
        means = _read_array(fh, "<f8", g * m, path).reshape(g, m)
        variances = _read_array(fh, "<f8", g * m, path).reshape(g, m)
    return DiagonalGmm.from_parameters(weights, means, variances)


# -- Baum-Welch statistics ----------------------------------------------------


def save_stats(path, stats: BaumWelchStats, config_digest=None, seed: int = 0) -> None:
    g, m = stats.f.shape
    with open(path, "wb") as fh:
        _write_header(fh, MAGIC_STATS, config_digest, seed)
        fh.write(struct.pack("<IIQ", g, m, stats.n_frames))
        _write_string(fh, stats.recording_id)
        _write_array(fh, stats.n, "<f8")
        _write_array(fh, stats.f, "<f8")


def load_stats(path, expected_digest=None) -> BaumWelchStats:
    path = Path(path)
    with open(path, "rb") as fh:
        header = _read_header(fh, MAGIC_STATS, path)
        _check_digest(header, expected_digest, path)
        g, m, n_frames = struct.unpack("<IIQ", fh.read(16))
        recording_id = _read_string(fh)
        n = _read_array(fh, "<f8", g, path)
        f = _read_array(fh, "<f8", g * m, path).reshape(g, m)
    return BaumWelchStats(n=n, f=f, n_frames=n_frames, recording_id=recording_id)


# -- total variability model --------------------------------------------------


def save_tmatrix(path, model: TotalVariability, config_digest=None, seed: int = 0) -> None:
    g, m, r = model.t_blocks_.shape
    with open(path, "wb") as fh:
        _write_header(fh, MAGIC_TMATRIX, config_digest, seed)
        fh.write(struct.pack("<III", g, m, r))
        fh.write(gmm_digest(model.ubm_))
        _write_array(fh, model.t_blocks_, "<f8")


def load_tmatrix(path, ubm: DiagonalGmm, expected_digest=None) -> TotalVariability:
    path = Path(path)
    with open(path, "rb") as fh:
        header = _read_header(fh, MAGIC_TMATRIX, path)
        _check_digest(header, expected_digest, path)
        g, m, r = struct.unpack("<III", fh.read(12))
        ubm_fingerprint = fh.read(32)
        blocks = _read_array(fh, "<f8", g * m * r, path).reshape(g, m, r)
    if ubm_fingerprint != gmm_digest(ubm):
        raise SerializationError(
            f"{path}: stored UBM fingerprint does not match the supplied UBM"
        )
    model = TotalVariability(rank=r)
    model.t_blocks_ = blocks
    model.ubm_ = ubm
    model.delta_trace_ = []
    return model


# -- whitener -----------------------------------------------------------------


def save_whitener(path, whitener: EmbeddingWhitener, config_digest=None, seed: int = 0) -> None:
    dim = whitener.mean_.shape[0]
    with open(path, "wb") as fh:
        _write_header(fh, MAGIC_WHITENER, config_digest, seed)
        fh.write(struct.pack("<Id", dim, whitener.condition_number_))
        _write_array(fh, whitener.mean_, "<f8")
        _write_array(fh, whitener.transform_, "<f8")


def load_whitener(path, expected_digest=None) -> EmbeddingWhitener:
    path = Path(path)
    with open(path, "rb") as fh:
        header = _read_header(fh, MAGIC_WHITENER, path)
        _check_digest(header, expected_digest, path)
        dim, condition_number = struct.unpack("<Id", fh.read(12))
        mean = _read_array(fh, "<f8", dim, path)
        transform = _read_array(fh, "<f8", dim * dim, path).reshape(dim, dim)
    whitener = EmbeddingWhitener()
    whitener.mean_ = mean
    whitener.transform_ = transform
    whitener.condition_number_ = condition_number
    return whitener


# -- CLDF ----------------------------------------------------------------------


def save_cldf(path, transform: CldfTransform, config_digest=None, seed: int = 0) -> None:
    in_dim, out_dim = transform.projection_.shape
    with open(path, "wb") as fh:
        _write_header(fh, MAGIC_CLDF, config_digest, seed)
        fh.write(struct.pack("<II", in_dim, out_dim))
        _write_array(fh, transform.mean_, "<f8")
        _write_array(fh, transform.projection_, "<f8")
        _write_array(fh, transform.eigenvalues_, "<f8")


def load_cldf(path, expected_digest=None) -> CldfTransform:
    path = Path(path)
    with open(path, "rb") as fh:
        header = _read_header(fh, MAGIC_CLDF, path)
        _check_digest(header, expected_digest, path)
        in_dim, out_dim = struct.unpack("<II", fh.read(8))
        mean = _read_array(fh, "<f8", in_dim, path)
        projection = _read_array(fh, "<f8", in_dim * out_dim, path).reshape(in_dim, out_dim)
        eigenvalues = _read_array(fh, "<f8", out_dim, path)
    transform = CldfTransform(n_dims=out_dim)
    transform.mean_ = mean
    transform.projection_ = projection
    transform.eigenvalues_ = eigenvalues
    return transform


# -- PLDA -----------------------------------------------------------------------


def save_plda(path, model: TwoCovariancePlda, config_digest=None, seed: int = 0) -> None:
    dim = model.dim_
    with open(path, "wb") as fh:
        _write_header(fh, MAGIC_PLDA, config_digest, seed)
        fh.write(struct.pack("<I", dim))
        _write_array(fh, model.mean_, "<f8")
        _write_array(fh, model.within_, "<f8")
        _write_array(fh, model.between_, "<f8")


def load_plda(path, expected_digest=None) -> TwoCovariancePlda:
    path = Path(path)
    with open(path, "rb") as fh:
        header = _read_header(fh, MAGIC_PLDA, path)
        _check_digest(header, expected_digest, path)
        (dim,) = struct.unpack("<I", fh.read(4))
        mean = _read_array(fh, "<f8", dim, path)
        within = _read_array(fh, "<f8", dim * dim, path).reshape(dim, dim)
        between = _read_array(fh, "<f8", dim * dim, path).reshape(dim, dim)
    return TwoCovariancePlda.from_parameters(mean, within, between)


# -- text / CSV outputs ----------------------------------------------------------


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_scores_csv(path, rows: list) -> None:
    """rows: (questioned_id, known_id, score, n_frames, label-or-empty)."""
    lines = ["questioned_id,known_id,score,n_frames,label"]
    for questioned_id, known_id, score, n_frames, label in rows:
        lines.append(f"{questioned_id},{known_id},{score!r},{n_frames},{label}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_scores_csv(path) -> list:
    rows = []
    lines = Path(path).read_text().splitlines()
    for line in lines[1:]:
        questioned_id, known_id, score, n_frames, label = line.split(",")
        rows.append((questioned_id, known_id, float(score), int(n_frames), label))
    return rows


def write_embeddings_csv(path, embeddings: list) -> None:
    """embeddings: iterable of Embedding objects, one CSV row each."""
    lines = ["recording_id,stage,values..."]
    for emb in embeddings:
        values = ",".join(repr(float(v)) for v in emb.vector)
        lines.append(f"{emb.recording_id},{emb.stage},{values}")
    Path(path).write_text("\n".join(lines) + "\n")


def save_calibration(path, calibrator, score_file_digest: str = "", n_scores: int = 0) -> None:
    """Human-readable record of the forensically critical stage."""
    lines = [
        f"method: {calibrator.method}",
        f"intercept: {calibrator.intercept_!r}",
        f"slope: {calibrator.slope_!r}",
        f"n_same: {calibrator.n_same_}",
        f"n_diff: {calibrator.n_diff_}",
    ]
    if getattr(calibrator, "pooled_variance_", None) is not None:
        lines += [
            f"same_mean: {calibrator.same_mean_!r}",
            f"diff_mean: {calibrator.diff_mean_!r}",
            f"pooled_variance: {calibrator.pooled_variance_!r}",
        ]
    lines += [
        f"training_scores: {n_scores}",
        f"training_file_sha256: {score_file_digest}",
    ]
    Path(path).write_text("\n".join(lines) + "\n")


def load_calibration(path):
    from .calibration import ScoreCalibrator

    fields = {}
    for line in Path(path).read_text().splitlines():
        key, _, value = line.partition(":")
        fields[key.strip()] = value.strip()
    calibrator = ScoreCalibrator(method=fields["method"])
    calibrator.intercept_ = float(fields["intercept"])
    calibrator.slope_ = float(fields["slope"])
    calibrator.n_same_ = int(fields["n_same"])
    calibrator.n_diff_ = int(fields["n_diff"])
    if "pooled_variance" in fields:
        calibrator.same_mean_ = float(fields["same_mean"])
        calibrator.diff_mean_ = float(fields["diff_mean"])
        calibrator.pooled_variance_ = float(fields["pooled_variance"])
    return calibrator


def write_tippett_csv(path, report) -> None:
    lines = ["curve,log10_lr,proportion"]
    for x, p in report.tippett_same:
        lines.append(f"same,{x!r},{p!r}")
    for x, p in report.tippett_diff:
        lines.append(f"diff,{x!r},{p!r}")
    Path(path).write_text("\n".join(lines) + "\n")
