"""Seeded generators for desk-scale test corpora.

Everything here is a pure function of its spec and seed, and every
generator returns the ground-truth parameters next to the data so tests
never assert against values nobody computed. Gaussian draws use the
package's Box-Muller sampler so corpora are stable across platforms.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .random import make_rng, multivariate_normal, standard_normal

CONDITION_QUESTIONED = "questioned-like"
CONDITION_KNOWN = "known-like"


@dataclass(frozen=True)
class SyntheticSpec:
    num_speakers: int = 10
    recordings_per_speaker: int = 4
    frames_per_recording: int = 3000
    feature_dim: int = 8
    between_scale: float = 1.0
    within_scale: float = 0.3
    channel_offsets: dict = field(
        default_factory=lambda: {CONDITION_QUESTIONED: None, CONDITION_KNOWN: None}
    )
    components_per_speaker: int = 4
    emission_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        for name in ("num_speakers", "recordings_per_speaker", "frames_per_recording", "feature_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    def between_cov(self) -> np.ndarray:
        return self.between_scale**2 * np.eye(self.feature_dim)

    def within_cov(self) -> np.ndarray:
        return self.within_scale**2 * np.eye(self.feature_dim)

    def offset(self, condition: str) -> np.ndarray:
        vec = self.channel_offsets.get(condition)
        if vec is None:
            return np.zeros(self.feature_dim)
        return np.asarray(vec, dtype=np.float64)


@dataclass(frozen=True)
class EmbeddingCorpus:
    embeddings: np.ndarray
    labels: list
    speaker_means: np.ndarray
    mean: np.ndarray
    between_cov: np.ndarray
    within_cov: np.ndarray


@dataclass(frozen=True)
class SyntheticRecording:
    recording_id: str
    speaker_id: str
    condition: str
    frames: np.ndarray


@dataclass(frozen=True)
class FeatureCorpus:
    recordings: list
    component_anchors: np.ndarray
    speaker_component_means: dict
    spec: SyntheticSpec


def gen_embedding_corpus(
    spec: SyntheticSpec,
    mean: np.ndarray | None = None,
    between_cov: np.ndarray | None = None,
    within_cov: np.ndarray | None = None,
) -> EmbeddingCorpus:
    """Speaker means from the between distribution, embeddings around them."""
    rng = make_rng(spec.seed)
    dim = spec.feature_dim
    mean = np.zeros(dim) if mean is None else np.asarray(mean, dtype=np.float64)
    between = spec.between_cov() if between_cov is None else np.asarray(between_cov)
    within = spec.within_cov() if within_cov is None else np.asarray(within_cov)

    speaker_means = multivariate_normal(rng, mean, between, spec.num_speakers)
    embeddings = []
    labels = []
    for s in range(spec.num_speakers):
        embeddings.append(
            multivariate_normal(rng, speaker_means[s], within, spec.recordings_per_speaker)
        )
        labels.extend([f"spk{s:03d}"] * spec.recordings_per_speaker)
    return EmbeddingCorpus(
        embeddings=np.concatenate(embeddings),
        labels=labels,
        speaker_means=speaker_means,
        mean=mean,
        between_cov=between,
        within_cov=within,
    )


def gen_feature_corpus(spec: SyntheticSpec) -> FeatureCorpus:
    """Feature-level corpus of speakers-as-GMMs with additive channel offsets.

    Component anchor means are shared across speakers; each speaker offsets
    them by a between-speaker draw, each recording adds a smaller
    within-speaker draw (session variability), and frames are sampled
    i.i.d. from the resulting mixture plus the condition's constant
    channel offset, which is exactly the kind of shift CMS removes.
    """
    rng = make_rng(spec.seed)
    dim = spec.feature_dim
    n_comp = spec.components_per_speaker
    anchors = 3.0 * standard_normal(rng, (n_comp, dim))
    conditions = [CONDITION_QUESTIONED, CONDITION_KNOWN]

    recordings = []
    speaker_means = {}
    for s in range(spec.num_speakers):
        speaker_id = f"spk{s:03d}"
        shift = multivariate_normal(rng, np.zeros(dim), spec.between_cov(), n_comp)
        speaker_means[speaker_id] = anchors + shift
        for r in range(spec.recordings_per_speaker):
            condition = conditions[r % 2]
            session = multivariate_normal(rng, np.zeros(dim), spec.within_cov(), n_comp)
            component_means = speaker_means[speaker_id] + session
            picks = np.minimum(
                (rng.random(spec.frames_per_recording) * n_comp).astype(np.int64),
                n_comp - 1,
            )
            noise = spec.emission_scale * standard_normal(
                rng, (spec.frames_per_recording, dim)
            )
            frames = component_means[picks] + noise + spec.offset(condition)
            recordings.append(
                SyntheticRecording(
                    recording_id=f"{speaker_id}_r{r:02d}",
                    speaker_id=speaker_id,
                    condition=condition,
                    frames=frames,
                )
            )
    return FeatureCorpus(
        recordings=recordings,
        component_anchors=anchors,
        speaker_component_means=speaker_means,
        spec=spec,
    )


def gen_score_sets(
    same_mean: float, diff_mean: float, variance: float, n_per_class: int, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """Equal-variance Gaussian score sets for the two trial classes."""
    if variance <= 0:
        raise ValueError("variance must be positive")
    rng = make_rng(seed)
    scale = np.sqrt(variance)
    same = same_mean + scale * standard_normal(rng, n_per_class)
    diff = diff_mean + scale * standard_normal(rng, n_per_class)
    return same, diff
