"""Corpus generators: determinism, ground-truth reporting, generative shape."""

import numpy as np
import pytest

from voicelr.features import FeatureMatrix
from voicelr.normalize import cms
from voicelr.plda import TwoCovariancePlda
from voicelr.synthetic import (
    SyntheticSpec,
    gen_embedding_corpus,
    gen_feature_corpus,
    gen_score_sets,
)


class TestEmbeddingCorpus:
    def test_deterministic(self):
        spec = SyntheticSpec(num_speakers=5, recordings_per_speaker=3, feature_dim=4, seed=7)
        a = gen_embedding_corpus(spec)
        b = gen_embedding_corpus(spec)
        assert np.array_equal(a.embeddings, b.embeddings)
        assert a.labels == b.labels

    def test_zero_within_collapses_recordings(self):
        spec = SyntheticSpec(
            num_speakers=4, recordings_per_speaker=5, feature_dim=3, within_scale=0.0, seed=1
        )
        corpus = gen_embedding_corpus(spec)
        for s in range(4):
            rows = corpus.embeddings[s * 5 : (s + 1) * 5]
            assert np.allclose(rows, rows[0])

    def test_truth_returned_and_recoverable(self):
        # Seeded: at 200 speakers the between-covariance sampling error is
        # itself close to the 10% bound, so the seed is part of the frozen
        # expectation.
        spec = SyntheticSpec(
            num_speakers=200,
            recordings_per_speaker=20,
            feature_dim=3,
            between_scale=1.0,
            within_scale=0.5,
            seed=10,
        )
        corpus = gen_embedding_corpus(spec)
        assert corpus.speaker_means.shape == (200, 3)
        model = TwoCovariancePlda().fit(corpus.embeddings, corpus.labels)
        rel_w = np.linalg.norm(model.within_ - corpus.within_cov) / np.linalg.norm(
            corpus.within_cov
        )
        rel_b = np.linalg.norm(model.between_ - corpus.between_cov) / np.linalg.norm(
            corpus.between_cov
        )
        assert rel_w < 0.1
        assert rel_b < 0.1


class TestFeatureCorpus:
    def test_deterministic(self):
        spec = SyntheticSpec(
            num_speakers=3, recordings_per_speaker=2, frames_per_recording=50, feature_dim=4, seed=3
        )
        a = gen_feature_corpus(spec)
        b = gen_feature_corpus(spec)
        for ra, rb in zip(a.recordings, b.recordings):
            assert ra.recording_id == rb.recording_id
            assert np.array_equal(ra.frames, rb.frames)

    def test_condition_offsets_removed_by_cms(self):
        # Two condition-variants of the same underlying frames differ by a
        # constant vector, which CMS removes exactly.
        spec = SyntheticSpec(
            num_speakers=2, recordings_per_speaker=2, frames_per_recording=100, feature_dim=3, seed=4
        )
        corpus = gen_feature_corpus(spec)
        frames = corpus.recordings[0].frames

        def as_features(vectors):
            return FeatureMatrix(
                vectors=vectors, frame_length_ms=20.0, frame_shift_ms=10.0, source_id="v"
            )

        variant_a = cms(as_features(frames + np.array([1.0, -2.0, 0.5])))
        variant_b = cms(as_features(frames + np.array([-0.3, 4.0, 1.5])))
        np.testing.assert_allclose(variant_a.vectors, variant_b.vectors, atol=1e-9)

    def test_conditions_alternate_and_offsets_applied(self):
        offset = {"questioned-like": np.full(2, 5.0), "known-like": np.full(2, -5.0)}
        spec = SyntheticSpec(
            num_speakers=1,
            recordings_per_speaker=2,
            frames_per_recording=4000,
            feature_dim=2,
            within_scale=0.0,
            channel_offsets=offset,
            seed=5,
        )
        corpus = gen_feature_corpus(spec)
        questioned, known = corpus.recordings
        assert questioned.condition == "questioned-like"
        assert known.condition == "known-like"
        gap = questioned.frames.mean(axis=0) - known.frames.mean(axis=0)
        np.testing.assert_allclose(gap, 10.0, atol=0.3)

    def test_speaker_structure_present(self):
        spec = SyntheticSpec(
            num_speakers=2,
            recordings_per_speaker=2,
            frames_per_recording=2000,
            feature_dim=4,
            between_scale=3.0,
            within_scale=0.1,
            seed=6,
        )
        corpus = gen_feature_corpus(spec)
        by_speaker = {}
        for rec in corpus.recordings:
            by_speaker.setdefault(rec.speaker_id, []).append(rec.frames.mean(axis=0))
        means = {s: np.mean(v, axis=0) for s, v in by_speaker.items()}
        a, b = means.values()
        within_gap = max(
            np.linalg.norm(v[0] - v[1]) for v in by_speaker.values()
        )
        assert np.linalg.norm(a - b) > within_gap


class TestScoreSets:
    def test_deterministic(self):
        a = gen_score_sets(0.5, -1.5, 1.0, 100, seed=8)
        b = gen_score_sets(0.5, -1.5, 1.0, 100, seed=8)
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])

    def test_moments(self):
        same, diff = gen_score_sets(0.5, -1.5, 2.0, 200_000, seed=9)
        assert same.mean() == pytest.approx(0.5, abs=0.02)
        assert diff.mean() == pytest.approx(-1.5, abs=0.02)
        assert same.var() == pytest.approx(2.0, abs=0.05)

    def test_single_scores_trigger_downstream_preconditions(self):
        from voicelr.calibration import CalibrationError, fit_logistic

        same, diff = gen_score_sets(0.5, -1.5, 1.0, 1, seed=10)
        with pytest.raises(CalibrationError):
            fit_logistic(same, diff)

    def test_invalid_variance(self):
        with pytest.raises(ValueError):
            gen_score_sets(0.0, 0.0, 0.0, 10, seed=0)
