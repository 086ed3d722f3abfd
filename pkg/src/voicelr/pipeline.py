"""Batch orchestration over dataset manifests.

Stages: extract (features per recording, idempotent), train (UBM plus the
models of the selected scoring path), calibrate (cross-condition pair
scores -> score-to-LR map), compare (one questioned/known pair -> reported
LR), validate (Cllr + Tippett report), and gen-corpus (synthetic data in
the standard formats).

The tool never reports an uncalibrated score as a likelihood ratio:
compare refuses to run without a fitted calibration model.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import serialize
from .audio import energy_vad, read_vad_segments, read_wav, segments_to_mask
from .calibration import ScoreCalibrator
from .cldf import CldfTransform
from .config import PATH_GMM_UBM, PATH_IVECTOR_PLDA, PipelineConfig
from .features import (
    STAGE_COMPENSATED,
    STAGE_RAW,
    FeatureMatrix,
    NoSpeechError,
    extract_features,
)
from .gmm import DiagonalGmm, map_adapt_means
from .ivector import Embedding, EmbeddingWhitener, TotalVariability, accumulate_stats
from .manifest import Manifest, ManifestRow, write_manifest
from .normalize import cms, cms_local, cmvn, cmvn_local, feature_warp
from .plda import TwoCovariancePlda
from .scoring import score_recording
from .synthetic import SyntheticSpec, gen_feature_corpus
from .validation import TrialSet, render_tippett_svg, tippett_points

FEATURE_SUFFIX = ".vlrf"
VAD_SIDECAR_SUFFIX = ".vad"


class PipelineError(Exception):
    """Invalid input or unmet stage precondition (CLI exit code 2)."""


class PartialFailure(Exception):
    """Some recordings failed but the run continued (CLI exit code 1)."""

    def __init__(self, failures: list):
        self.failures = failures
        super().__init__(
            "; ".join(f"{rec_id}: {err}" for rec_id, err in failures)
        )


def _map_items(func, items, single_thread: bool):
    if single_thread or len(items) <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor() as pool:
        return list(pool.map(func, items))


def _echo_config(config: PipelineConfig, directory: Path) -> None:
    """Every stage writes the full config it ran under next to its outputs."""
    directory.mkdir(parents=True, exist_ok=True)
    config.save(directory / "config_used.json")


def compensate(features: FeatureMatrix, config: PipelineConfig) -> FeatureMatrix:
    if config.compensation == "cms":
        return cms(features)
    if config.compensation == "cmvn":
        return cmvn(features)
    if config.compensation == "cms-local":
        return cms_local(features, config.warp_half_window)
    if config.compensation == "cmvn-local":
        return cmvn_local(features, config.warp_half_window)
    return feature_warp(features, config.warp)


def recording_features(path, config: PipelineConfig) -> FeatureMatrix:
    """Compensated features for one recording (WAV or persisted features).

    A `.vad` sidecar next to a WAV file supersedes the energy detector.
    Persisted feature files are passed through compensation only if still
    raw.
    """
    path = Path(path)
    if path.suffix == FEATURE_SUFFIX:
        features = serialize.load_features(path)
        if features.stage == STAGE_COMPENSATED:
            return features
        return compensate(features, config)
    buffer = read_wav(path)
    sidecar = path.with_suffix(path.suffix + VAD_SIDECAR_SUFFIX)
    if sidecar.exists():
        mask = segments_to_mask(
            read_vad_segments(sidecar),
            buffer,
            config.mfcc.frame_length_ms,
            config.mfcc.frame_shift_ms,
        )
    else:
        mask = energy_vad(
            buffer,
            config.mfcc.frame_length_ms,
            config.mfcc.frame_shift_ms,
            config.vad_threshold_db,
        )
    raw = extract_features(buffer, mask, config.mfcc)
    return compensate(raw, config)


# -- extract -------------------------------------------------------------------


def _read_index(index_path: Path) -> dict:
    entries = {}
    if index_path.exists():
        for line in index_path.read_text().splitlines()[1:]:
            rec_id, source_digest, config_digest, filename = line.split(",")
            entries[rec_id] = (source_digest, config_digest, filename)
    return entries


def _write_index(index_path: Path, entries: dict) -> None:
    lines = ["recording_id,source_sha256,config_sha256,feature_file"]
    for rec_id in sorted(entries):
        source_digest, config_digest, filename = entries[rec_id]
        lines.append(f"{rec_id},{source_digest},{config_digest},{filename}")
    index_path.write_text("\n".join(lines) + "\n")


def cmd_extract(
    manifest: Manifest,
    config: PipelineConfig,
    out_dir,
    single_thread: bool = False,
) -> Path:
    """Persist one compensated feature file per manifest recording.

    Recordings already indexed under the same source and config hashes are
    skipped, as are all-silence recordings (with a warning). Per-recording
    failures are collected and reported together; the survivors are still
    written.
    """
    features_dir = Path(out_dir) / "features"
    features_dir.mkdir(parents=True, exist_ok=True)
    _echo_config(config, Path(out_dir))
    index_path = features_dir / "index.csv"
    entries = _read_index(index_path)
    config_digest = config.digest()
    config_hex = config_digest.hex()

    def process(row: ManifestRow):
        source_digest = serialize.file_digest(row.recording_path)
        filename = row.recording_id + FEATURE_SUFFIX
        cached = entries.get(row.recording_id)
        if cached == (source_digest, config_hex, filename) and (features_dir / filename).exists():
            return row.recording_id, None, None
        features = recording_features(row.recording_path, config)
        serialize.save_features(
            features_dir / filename, features, config_digest, config.seed
        )
        return row.recording_id, source_digest, filename

    def safe_process(row: ManifestRow):
        try:
            return row, process(row), None
        except Exception as exc:  # noqa: BLE001 - partial-failure contract
            return row, None, exc

    failures = []
    for row, result, error in _map_items(safe_process, list(manifest.rows), single_thread):
        if error is None:
            rec_id, source_digest, filename = result
            if source_digest is not None:
                entries[rec_id] = (source_digest, config_hex, filename)
        elif isinstance(error, NoSpeechError):
            warnings.warn(f"skipping {row.recording_id}: {error}")
        else:
            failures.append((row.recording_id, str(error)))
    _write_index(index_path, entries)
    if failures:
        raise PartialFailure(failures)
    return features_dir


def load_extracted(features_dir, row: ManifestRow, config: PipelineConfig) -> FeatureMatrix:
    path = Path(features_dir) / (row.recording_id + FEATURE_SUFFIX)
    if not path.exists():
        raise PipelineError(
            f"features for {row.recording_id} not found under {features_dir}; "
            "run extract first"
        )
    features = serialize.load_features(path, expected_digest=config.digest())
    if features.stage != STAGE_COMPENSATED:
        raise PipelineError(
            f"{row.recording_id}: stage {features.stage!r} mixed into a "
            "compensated-feature run"
        )
    return features


# -- train ---------------------------------------------------------------------


@dataclass
class ModelSet:
    ubm: DiagonalGmm
    tv: TotalVariability | None = None
    whitener: EmbeddingWhitener | None = None
    cldf: CldfTransform | None = None
    plda: TwoCovariancePlda | None = None
    speaker_models: dict | None = None


def _pooled_features(rows, features_dir, config) -> np.ndarray:
    matrices = [load_extracted(features_dir, row, config) for row in rows]
    return np.concatenate([m.vectors for m in matrices])


def cmd_train(
    manifest: Manifest,
    config: PipelineConfig,
    models_dir,
    features_dir,
    single_thread: bool = False,
) -> ModelSet:
    """Train and persist the UBM plus the selected path's models.

    The UBM uses the ubm split, falling back to the population split when
    no ubm rows exist. The GMM-UBM path additionally adapts one speaker
    model per known-speaker recording in the case split; the i-vector path
    trains the subspace, whitener, discriminant projection, and PLDA on
    the population split.
    """
    models_dir = Path(models_dir)
    models_dir.mkdir(parents=True, exist_ok=True)
    _echo_config(config, models_dir)
    digest = config.digest()

    ubm_rows = manifest.split("ubm") or manifest.split("population")
    if not ubm_rows:
        raise PipelineError("no ubm or population rows to train the UBM on")
    ubm_data = _pooled_features(ubm_rows, features_dir, config)
    ubm = DiagonalGmm(
        n_components=config.gmm_components,
        max_iter=config.gmm_max_iter,
        tol=config.gmm_tol,
        variance_floor_factor=config.gmm_variance_floor_factor,
        random_state=config.seed,
    ).fit(ubm_data)
    serialize.save_gmm(models_dir / "ubm.vlrg", ubm, digest, config.seed)
    models = ModelSet(ubm=ubm)

    if config.scoring_path == PATH_GMM_UBM:
        models.speaker_models = {}
        known_case_rows = [
            row for row in manifest.split("case") if row.condition == "known-like"
        ]
        for row in known_case_rows:
            features = load_extracted(features_dir, row, config)
            speaker_model = map_adapt_means(ubm, features.vectors, config.relevance_factor)
            serialize.save_gmm(
                models_dir / f"case_{row.recording_id}.vlrg", speaker_model, digest, config.seed
            )
            models.speaker_models[row.recording_id] = speaker_model
        return models

    population_rows = manifest.split("population")
    if not population_rows:
        raise PipelineError("i-vector path needs a population split")
    feature_list = [
        load_extracted(features_dir, row, config) for row in population_rows
    ]
    stats = _map_items(
        lambda feats: accumulate_stats(ubm, feats), feature_list, single_thread
    )
    tv = TotalVariability(
        rank=config.ivector_rank,
        n_iter=config.ivector_iterations,
        random_state=config.seed,
    ).fit(stats, ubm)
    serialize.save_tmatrix(models_dir / "tmatrix.vlrt", tv, digest, config.seed)

    ivectors = tv.transform(stats)
    whitener = EmbeddingWhitener().fit(ivectors)
    serialize.save_whitener(models_dir / "whitener.vlrw", whitener, digest, config.seed)
    whitened = whitener.transform(ivectors)

    labels = [row.speaker_id for row in population_rows]
    cldf = CldfTransform(n_dims=config.cldf_dims).fit(whitened, labels)
    serialize.save_cldf(models_dir / "cldf.vlrl", cldf, digest, config.seed)
    projected = cldf.transform(whitened)

    plda = TwoCovariancePlda().fit(projected, labels)
    serialize.save_plda(models_dir / "plda.vlrp", plda, digest, config.seed)

    exported = []
    for i, row in enumerate(population_rows):
        exported.append(Embedding(ivectors[i], "raw_ivector", row.recording_id))
        exported.append(Embedding(whitened[i], "whitened", row.recording_id))
        exported.append(Embedding(projected[i], "cldf", row.recording_id))
    serialize.write_embeddings_csv(models_dir / "population_embeddings.csv", exported)

    models.tv = tv
    models.whitener = whitener
    models.cldf = cldf
    models.plda = plda
    return models


def load_models(models_dir, config: PipelineConfig) -> ModelSet:
    models_dir = Path(models_dir)
    digest = config.digest()
    ubm_path = models_dir / "ubm.vlrg"
    if not ubm_path.exists():
        raise PipelineError(f"no UBM at {ubm_path}; run train first")
    ubm = serialize.load_gmm(ubm_path, expected_digest=digest)
    models = ModelSet(ubm=ubm)
    if config.scoring_path == PATH_GMM_UBM:
        models.speaker_models = {}
        for path in sorted(models_dir.glob("case_*.vlrg")):
            rec_id = path.stem.removeprefix("case_")
            models.speaker_models[rec_id] = serialize.load_gmm(path, expected_digest=digest)
        return models
    for name, loader in (
        ("tmatrix.vlrt", None),
        ("whitener.vlrw", serialize.load_whitener),
        ("cldf.vlrl", serialize.load_cldf),
        ("plda.vlrp", serialize.load_plda),
    ):
        if not (models_dir / name).exists():
            raise PipelineError(f"missing model file {models_dir / name}; run train first")
    models.tv = serialize.load_tmatrix(models_dir / "tmatrix.vlrt", ubm, expected_digest=digest)
    models.whitener = serialize.load_whitener(models_dir / "whitener.vlrw", expected_digest=digest)
    models.cldf = serialize.load_cldf(models_dir / "cldf.vlrl", expected_digest=digest)
    models.plda = serialize.load_plda(models_dir / "plda.vlrp", expected_digest=digest)
    return models


# -- scoring --------------------------------------------------------------------


class _PairScorer:
    """Scores (questioned, known) feature pairs under the configured path.

    Per-recording intermediates (adapted models, embeddings) are cached by
    recording id across pairs. Concurrent warm-up may compute an entry
    twice; both computations are deterministic and identical, so the race
    is benign.
    """

    def __init__(self, models: ModelSet, config: PipelineConfig):
        self.models = models
        self.config = config
        self._speaker_models: dict = {}
        self._embeddings: dict = {}

    def _speaker_model(self, known: FeatureMatrix) -> DiagonalGmm:
        key = known.source_id
        if key not in self._speaker_models:
            self._speaker_models[key] = map_adapt_means(
                self.models.ubm, known.vectors, self.config.relevance_factor
            )
        return self._speaker_models[key]

    def embedding(self, features: FeatureMatrix) -> np.ndarray:
        key = features.source_id
        if key not in self._embeddings:
            stats = accumulate_stats(self.models.ubm, features)
            ivec = self.models.tv.extract(stats)
            whitened = self.models.whitener.transform(ivec)
            self._embeddings[key] = self.models.cldf.transform(whitened)
        return self._embeddings[key]

    def score(self, questioned: FeatureMatrix, known: FeatureMatrix) -> tuple[float, int]:
        """Returns (score, questioned frame count)."""
        if self.config.scoring_path == PATH_GMM_UBM:
            model = self._speaker_model(known)
            result = score_recording(model, self.models.ubm, questioned)
            return result.value, result.n_frames
        log_lr = self.models.plda.log_likelihood_ratio(
            self.embedding(questioned), self.embedding(known)
        )
        return float(log_lr), questioned.n_frames


def build_pairs(rows: list) -> tuple[list, list]:
    """Cross-condition trial pairs from one split's rows.

    Same-speaker pairs combine each speaker's questioned-like and
    known-like recordings; different-speaker pairs cross every speaker's
    questioned-like recordings with every other speaker's known-like ones.
    """
    by_speaker: dict = {}
    for row in rows:
        by_speaker.setdefault(row.speaker_id, {"questioned-like": [], "known-like": []})
        if row.condition in ("questioned-like", "known-like"):
            by_speaker[row.speaker_id][row.condition].append(row)
    same, diff = [], []
    speakers = sorted(by_speaker)
    for speaker in speakers:
        for q_row in by_speaker[speaker]["questioned-like"]:
            for k_row in by_speaker[speaker]["known-like"]:
                same.append((q_row, k_row))
    for q_speaker in speakers:
        for k_speaker in speakers:
            if q_speaker == k_speaker:
                continue
            for q_row in by_speaker[q_speaker]["questioned-like"]:
                for k_row in by_speaker[k_speaker]["known-like"]:
                    diff.append((q_row, k_row))
    return same, diff


def _score_split(
    manifest: Manifest,
    split_name: str,
    config: PipelineConfig,
    models: ModelSet,
    features_dir,
    single_thread: bool,
):
    rows = manifest.split(split_name)
    if not rows:
        raise PipelineError(f"empty {split_name} split")
    same_pairs, diff_pairs = build_pairs(rows)
    if not same_pairs:
        raise PipelineError(
            f"no same-speaker pairs constructible from the {split_name} split; "
            "each speaker needs both condition tags"
        )
    features = {
        row.recording_id: load_extracted(features_dir, row, config) for row in rows
    }
    scorer = _PairScorer(models, config)
    # Warm per-recording caches in parallel, then score pairs serially.
    if config.scoring_path == PATH_IVECTOR_PLDA:
        _map_items(
            lambda rec_id: scorer.embedding(features[rec_id]),
            sorted(features),
            single_thread,
        )
    else:
        known_ids = sorted({k.recording_id for _, k in same_pairs + diff_pairs})
        _map_items(
            lambda rec_id: scorer._speaker_model(features[rec_id]),
            known_ids,
            single_thread,
        )
    score_rows = []
    same_scores, diff_scores = [], []
    for label, pairs, sink in (
        ("same", same_pairs, same_scores),
        ("diff", diff_pairs, diff_scores),
    ):
        for q_row, k_row in pairs:
            value, n_frames = scorer.score(
                features[q_row.recording_id], features[k_row.recording_id]
            )
            sink.append(value)
            score_rows.append(
                (q_row.recording_id, k_row.recording_id, value, n_frames, label)
            )
    return np.asarray(same_scores), np.asarray(diff_scores), score_rows


# -- calibrate -------------------------------------------------------------------


def cmd_calibrate(
    manifest: Manifest,
    config: PipelineConfig,
    models_dir,
    features_dir,
    out_dir,
    single_thread: bool = False,
) -> ScoreCalibrator:
    """Score all calibration-split cross-condition pairs and fit the LR map."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _echo_config(config, out_dir)
    models = load_models(models_dir, config)
    same, diff, score_rows = _score_split(
        manifest, "calibration", config, models, features_dir, single_thread
    )
    scores_path = out_dir / "calibration_scores.csv"
    serialize.write_scores_csv(scores_path, score_rows)
    calibrator = ScoreCalibrator(method=config.calibration_method).fit(
        np.concatenate([same, diff]),
        np.concatenate([np.ones(len(same), dtype=bool), np.zeros(len(diff), dtype=bool)]),
    )
    serialize.save_calibration(
        Path(models_dir) / "calibration.txt",
        calibrator,
        score_file_digest=serialize.file_digest(scores_path),
        n_scores=len(score_rows),
    )
    return calibrator


def load_calibration(models_dir) -> ScoreCalibrator:
    path = Path(models_dir) / "calibration.txt"
    if not path.exists():
        raise PipelineError(
            f"no calibration model at {path}; refusing to report an "
            "uncalibrated score as a likelihood ratio (run calibrate first)"
        )
    return serialize.load_calibration(path)


# -- compare ---------------------------------------------------------------------


def cmd_compare(
    questioned_path,
    known_path,
    config: PipelineConfig,
    models_dir,
    out_dir=None,
) -> dict:
    """Score one questioned/known pair and report the calibrated LR."""
    models = load_models(models_dir, config)
    calibrator = load_calibration(models_dir)
    questioned = recording_features(questioned_path, config)
    known = recording_features(known_path, config)
    scorer = _PairScorer(models, config)
    score, n_frames = scorer.score(questioned, known)
    log_lr = float(calibrator.transform(score))

    models_dir = Path(models_dir)
    fingerprints = {
        path.name: serialize.file_digest(path)
        for path in sorted(models_dir.iterdir())
        if path.is_file()
    }
    result = {
        "questioned": str(questioned_path),
        "known": str(known_path),
        "scoring_path": config.scoring_path,
        "score": score,
        "n_frames": n_frames,
        "log_lr_natural": log_lr,
        "log_lr_log10": float(log_lr / np.log(10.0)),
        "lr": float(np.exp(log_lr)),
        "config_sha256": config.digest().hex(),
        "seed": config.seed,
        "model_fingerprints": fingerprints,
    }
    text = format_comparison(result)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        name = f"compare_{Path(questioned_path).stem}_vs_{Path(known_path).stem}.txt"
        (out_dir / name).write_text(text)
    return result


def format_comparison(result: dict) -> str:
    lines = [
        f"questioned: {result['questioned']}",
        f"known: {result['known']}",
        f"scoring_path: {result['scoring_path']}",
        f"score: {result['score']!r}",
        f"log_lr_natural: {result['log_lr_natural']!r}",
        f"log_lr_log10: {result['log_lr_log10']!r}",
        f"lr: {result['lr']!r}",
        "provenance:",
        f"  config_sha256: {result['config_sha256']}",
        f"  seed: {result['seed']}",
    ]
    for name, digest in result["model_fingerprints"].items():
        lines.append(f"  model {name}: {digest}")
    return "\n".join(lines) + "\n"


# -- validate --------------------------------------------------------------------


def cmd_validate(
    manifest: Manifest,
    config: PipelineConfig,
    models_dir,
    features_dir,
    out_dir,
    uncalibrated: bool = False,
    single_thread: bool = False,
):
    """Score the test split, calibrate, and emit the validation report.

    With uncalibrated=True the raw scores are treated as log LRs (for
    measuring how much the calibration stage contributes); the report is
    labeled accordingly.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _echo_config(config, out_dir)
    models = load_models(models_dir, config)
    same, diff, score_rows = _score_split(
        manifest, "test", config, models, features_dir, single_thread
    )
    serialize.write_scores_csv(out_dir / "test_scores.csv", score_rows)

    if uncalibrated:
        same_log_lrs, diff_log_lrs = same, diff
        system_id = f"{config.scoring_path} (uncalibrated scores)"
    else:
        calibrator = load_calibration(models_dir)
        same_log_lrs = calibrator.transform(same)
        diff_log_lrs = calibrator.transform(diff)
        system_id = f"{config.scoring_path} + {config.calibration_method} calibration"

    trials = TrialSet(same_log_lrs=same_log_lrs, diff_log_lrs=diff_log_lrs)
    report = tippett_points(trials, system_id=system_id)

    lr_lines = ["questioned_id,known_id,log_lr_natural,label"]
    log_lrs = np.concatenate([same_log_lrs, diff_log_lrs])
    for (q_id, k_id, _score, _n, label), log_lr in zip(score_rows, log_lrs):
        lr_lines.append(f"{q_id},{k_id},{log_lr!r},{label}")
    (out_dir / "trial_log_lrs.csv").write_text("\n".join(lr_lines) + "\n")
    serialize.write_tippett_csv(out_dir / "tippett.csv", report)
    (out_dir / "tippett.svg").write_text(render_tippett_svg(report))
    (out_dir / "summary.txt").write_text(report.summary_line() + "\n")
    return report


# -- gen-corpus ------------------------------------------------------------------


def cmd_gen_corpus(
    out_dir,
    population_speakers: int = 10,
    calibration_speakers: int = 6,
    test_speakers: int = 6,
    recordings_per_speaker: int = 4,
    frames_per_recording: int = 3000,
    feature_dim: int = 8,
    channel_offset: float = 1.0,
    between_scale: float = 1.0,
    within_scale: float = 0.3,
    seed: int = 0,
) -> Path:
    """Generate a synthetic feature corpus plus manifest in standard formats.

    Speakers are partitioned across the population, calibration, and test
    splits (disjoint by construction); questioned-like and known-like
    recordings get opposite constant channel offsets.
    """
    out_dir = Path(out_dir)
    features_dir = out_dir / "recordings"
    features_dir.mkdir(parents=True, exist_ok=True)
    total = population_speakers + calibration_speakers + test_speakers
    offsets = {
        "questioned-like": np.full(feature_dim, channel_offset / 2.0),
        "known-like": np.full(feature_dim, -channel_offset / 2.0),
    }
    spec = SyntheticSpec(
        num_speakers=total,
        recordings_per_speaker=recordings_per_speaker,
        frames_per_recording=frames_per_recording,
        feature_dim=feature_dim,
        between_scale=between_scale,
        within_scale=within_scale,
        channel_offsets=offsets,
        seed=seed,
    )
    corpus = gen_feature_corpus(spec)

    split_of = {}
    for i in range(total):
        speaker_id = f"spk{i:03d}"
        if i < population_speakers:
            split_of[speaker_id] = "population"
        elif i < population_speakers + calibration_speakers:
            split_of[speaker_id] = "calibration"
        else:
            split_of[speaker_id] = "test"

    rows = []
    for recording in corpus.recordings:
        features = FeatureMatrix(
            vectors=recording.frames,
            frame_length_ms=20.0,
            frame_shift_ms=10.0,
            stage=STAGE_RAW,
            source_id=recording.recording_id,
        )
        filename = recording.recording_id + FEATURE_SUFFIX
        serialize.save_features(features_dir / filename, features, None, seed)
        # Manifest paths are relative to the manifest file so the corpus
        # directory stays relocatable.
        rows.append(
            ManifestRow(
                recording_path=Path("recordings") / filename,
                speaker_id=recording.speaker_id,
                condition=recording.condition,
                split=split_of[recording.speaker_id],
            )
        )
    manifest_path = out_dir / "manifest.csv"
    write_manifest(manifest_path, rows)
    return manifest_path
