"""Command-line interface.

Exit codes: 0 success, 1 partial failure (some recordings failed but the
run continued), 2 invalid input or unmet precondition.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from . import pipeline
from .audio import AudioError
from .calibration import CalibrationError
from .cldf import CldfError
from .config import ConfigError, PipelineConfig
from .features import FeatureError
from .gmm import GmmError
from .ivector import IvectorError
from .manifest import ManifestError, load_manifest
from .pipeline import PartialFailure, PipelineError
from .plda import PldaError
from .serialize import SerializationError
from .validation import ValidationError

USER_ERRORS = (
    PipelineError,
    ManifestError,
    ConfigError,
    AudioError,
    FeatureError,
    GmmError,
    IvectorError,
    CldfError,
    PldaError,
    CalibrationError,
    ValidationError,
    SerializationError,
    FileNotFoundError,
)


def _load_config(args) -> PipelineConfig:
    config = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    if getattr(args, "seed", None) is not None:
        config = dataclasses.replace(config, seed=args.seed)
    if getattr(args, "path", None) is not None:
        config = dataclasses.replace(config, scoring_path=args.path)
    return config


def _add_common(parser, manifest=True, models=False):
    parser.add_argument("--config", help="pipeline config JSON (defaults used if omitted)")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument(
        "--path",
        choices=["gmm-ubm", "ivector-plda"],
        default=None,
        help="override the config scoring path",
    )
    parser.add_argument("--single-thread", action="store_true")
    if manifest:
        parser.add_argument("--manifest", required=True)
    if models:
        parser.add_argument("--models-dir", required=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="voicelr",
        description="Forensic voice comparison: calibrated likelihood ratios "
        "for pairs of voice recordings.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="extract compensated features per recording")
    _add_common(p)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("train", help="train the UBM and path-specific models")
    _add_common(p, models=True)
    p.add_argument("--out-dir", required=True, help="directory holding extracted features")

    p = sub.add_parser("calibrate", help="fit the score-to-LR conversion")
    _add_common(p, models=True)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("compare", help="report a calibrated LR for one pair")
    p.add_argument("questioned")
    p.add_argument("known")
    _add_common(p, manifest=False, models=True)
    p.add_argument("--out-dir", default=None)

    p = sub.add_parser("validate", help="Cllr and Tippett report on the test split")
    _add_common(p, models=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument(
        "--uncalibrated",
        action="store_true",
        help="treat raw scores as log LRs (measures the calibration stage's value)",
    )

    p = sub.add_parser("gen-corpus", help="generate a synthetic feature corpus + manifest")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--population-speakers", type=int, default=10)
    p.add_argument("--calibration-speakers", type=int, default=6)
    p.add_argument("--test-speakers", type=int, default=6)
    p.add_argument("--recordings-per-speaker", type=int, default=4)
    p.add_argument("--frames-per-recording", type=int, default=3000)
    p.add_argument("--feature-dim", type=int, default=8)
    p.add_argument("--channel-offset", type=float, default=1.0)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "extract":
            manifest = load_manifest(args.manifest)
            config = _load_config(args)
            features_dir = pipeline.cmd_extract(
                manifest, config, args.out_dir, args.single_thread
            )
            print(f"features written to {features_dir}")
        elif args.command == "train":
            manifest = load_manifest(args.manifest)
            config = _load_config(args)
            pipeline.cmd_train(
                manifest,
                config,
                args.models_dir,
                Path(args.out_dir) / "features",
                args.single_thread,
            )
            print(f"models written to {args.models_dir}")
        elif args.command == "calibrate":
            manifest = load_manifest(args.manifest)
            config = _load_config(args)
            calibrator = pipeline.cmd_calibrate(
                manifest,
                config,
                args.models_dir,
                Path(args.out_dir) / "features",
                args.out_dir,
                args.single_thread,
            )
            print(
                f"calibration fitted: intercept={calibrator.intercept_:.6f} "
                f"slope={calibrator.slope_:.6f}"
            )
        elif args.command == "compare":
            config = _load_config(args)
            result = pipeline.cmd_compare(
                args.questioned, args.known, config, args.models_dir, args.out_dir
            )
            print(pipeline.format_comparison(result), end="")
        elif args.command == "validate":
            manifest = load_manifest(args.manifest)
            config = _load_config(args)
            report = pipeline.cmd_validate(
                manifest,
                config,
                args.models_dir,
                Path(args.out_dir) / "features",
                Path(args.out_dir) / "validation",
                uncalibrated=args.uncalibrated,
                single_thread=args.single_thread,
            )
            print(report.summary_line())
        elif args.command == "gen-corpus":
            manifest_path = pipeline.cmd_gen_corpus(
                args.out_dir,
                population_speakers=args.population_speakers,
                calibration_speakers=args.calibration_speakers,
                test_speakers=args.test_speakers,
                recordings_per_speaker=args.recordings_per_speaker,
                frames_per_recording=args.frames_per_recording,
                feature_dim=args.feature_dim,
                channel_offset=args.channel_offset,
                seed=args.seed,
            )
            print(f"manifest written to {manifest_path}")
    except PartialFailure as exc:
        print(f"partial failure: {exc}", file=sys.stderr)
        return 1
    except USER_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
