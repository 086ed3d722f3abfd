"""Pipeline configuration: one structured JSON file covering every stage.

The config is echoed into every persisted artifact via its SHA-256 digest
so outputs can always be traced back to the exact settings (and seed) that
produced them.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .features import MfccConfig
from .normalize import WarpConfig

PATH_GMM_UBM = "gmm-ubm"
PATH_IVECTOR_PLDA = "ivector-plda"

COMPENSATIONS = ("warp", "cms", "cmvn", "cms-local", "cmvn-local")


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    mfcc: MfccConfig = field(default_factory=MfccConfig)
    compensation: str = "warp"
    warp_half_window: int = 150
    vad_threshold_db: float = 30.0
    scoring_path: str = PATH_GMM_UBM
    gmm_components: int = 1024
    gmm_max_iter: int = 100
    gmm_tol: float = 1e-5
    gmm_variance_floor_factor: float = 1e-3
    relevance_factor: float = 16.0
    ivector_rank: int = 400
    ivector_iterations: int = 5
    cldf_dims: int | None = None
    calibration_method: str = "logistic"
    seed: int = 0

    def __post_init__(self):
        if self.compensation not in COMPENSATIONS:
            raise ConfigError(f"compensation {self.compensation!r} not in {COMPENSATIONS}")
        if self.scoring_path not in (PATH_GMM_UBM, PATH_IVECTOR_PLDA):
            raise ConfigError(f"unknown scoring path {self.scoring_path!r}")
        if self.calibration_method not in ("logistic", "pooled_gaussian"):
            raise ConfigError(f"unknown calibration method {self.calibration_method!r}")

    @property
    def warp(self) -> WarpConfig:
        return WarpConfig(half_window_frames=self.warp_half_window)

    def to_json(self) -> str:
        payload = asdict(self)
        payload["mfcc"] = asdict(self.mfcc)
        return json.dumps(payload, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "PipelineConfig":
        try:
            payload = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(payload) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        if "mfcc" in payload:
            payload["mfcc"] = MfccConfig(**payload["mfcc"])
        try:
            return cls(**payload)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        return cls.from_json(Path(path).read_text())

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    def digest(self) -> bytes:
        """SHA-256 over the canonical JSON form."""
        canonical = json.dumps(
            json.loads(self.to_json()), sort_keys=True, separators=(",", ":")
        )
        return hashlib.sha256(canonical.encode("utf-8")).digest()

    def with_seed(self, seed: int) -> "PipelineConfig":
        return replace(self, seed=seed)
