"""Dataset manifests: CSV rows mapping recordings to speakers, conditions
and pipeline splits, with the split-hygiene checks the calibration and
validation stages depend on."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

SPLITS = ("ubm", "population", "calibration", "test", "case")
CONDITIONS = ("questioned-like", "known-like", "other")

# Splits whose speakers must not overlap; leakage between them invalidates
# calibration and validation results.
DISJOINT_SPLITS = ("population", "calibration", "test")


class ManifestError(Exception):
    pass


@dataclass(frozen=True)
class ManifestRow:
    recording_path: Path
    speaker_id: str
    condition: str
    split: str

    @property
    def recording_id(self) -> str:
        return self.recording_path.stem


@dataclass(frozen=True)
class Manifest:
    rows: tuple

    def split(self, name: str) -> list:
        return [row for row in self.rows if row.split == name]

    def speakers(self, split_name: str) -> set:
        return {row.speaker_id for row in self.rows if row.split == split_name}


def load_manifest(path, check_paths: bool = True) -> Manifest:
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines:
        raise ManifestError(f"{path}: empty manifest")
    header = [col.strip() for col in lines[0].split(",")]
    expected = ["recording_path", "speaker_id", "condition", "split"]
    if header != expected:
        raise ManifestError(
            f"{path}: header {header} does not match {expected}"
        )

    rows = []
    seen_ids: dict = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 4:
            raise ManifestError(f"{path}:{lineno}: expected 4 columns, got {len(parts)}")
        rec_path, speaker_id, condition, split = parts
        if not speaker_id:
            raise ManifestError(f"{path}:{lineno}: empty speaker_id")
        if condition not in CONDITIONS:
            raise ManifestError(
                f"{path}:{lineno}: condition {condition!r} not in {CONDITIONS}"
            )
        if split not in SPLITS:
            raise ManifestError(f"{path}:{lineno}: split {split!r} not in {SPLITS}")
        resolved = (path.parent / rec_path).resolve() if not Path(rec_path).is_absolute() else Path(rec_path)
        if check_paths and not resolved.exists():
            raise ManifestError(f"{path}:{lineno}: recording {resolved} does not exist")
        row = ManifestRow(
            recording_path=resolved, speaker_id=speaker_id, condition=condition, split=split
        )
        if row.recording_id in seen_ids:
            raise ManifestError(
                f"{path}:{lineno}: recording id {row.recording_id!r} duplicates "
                f"line {seen_ids[row.recording_id]} (ids come from file stems)"
            )
        seen_ids[row.recording_id] = lineno
        rows.append(row)

    manifest = Manifest(rows=tuple(rows))
    _check_split_hygiene(manifest, path)
    return manifest


def _check_split_hygiene(manifest: Manifest, path) -> None:
    for i, first in enumerate(DISJOINT_SPLITS):
        for second in DISJOINT_SPLITS[i + 1 :]:
            overlap = manifest.speakers(first) & manifest.speakers(second)
            if overlap:
                raise ManifestError(
                    f"{path}: speakers {sorted(overlap)} appear in both "
                    f"{first!r} and {second!r} splits; these must be disjoint"
                )


def write_manifest(path, rows: list) -> None:
    lines = ["recording_path,speaker_id,condition,split"]
    for row in rows:
        lines.append(
            f"{row.recording_path},{row.speaker_id},{row.condition},{row.split}"
        )
    Path(path).write_text("\n".join(lines) + "\n")
