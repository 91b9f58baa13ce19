"""Parser for the flat ``key=value`` training manifest.

The pipeline that emits this file lives in a separate package; the file
format is the only coupling. Every invariant is re-checked here so a
hand-edited manifest fails before any training starts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

from imptrain.errors import ManifestError

# every key must appear exactly once; nothing else is allowed
MANIFEST_KEYS = (
    "base_model_ref",
    "lora_rank",
    "lora_alpha",
    "lora_dropout",
    "learning_rate",
    "batch_size",
    "target_projections",
    "dataset_path",
)

KNOWN_PROJECTIONS = ("query", "key", "value", "output")


@dataclass(frozen=True)
class Manifest:
    base_model_ref: str
    lora_rank: int
    lora_alpha: int
    lora_dropout: float
    learning_rate: float
    batch_size: int
    target_projections: tuple[str, ...]
    dataset_path: str

    def validate(self) -> None:
        if self.lora_rank < 1:
            raise ManifestError(f"lora_rank must be >= 1, got {self.lora_rank}")
        if self.lora_alpha < 1:
            raise ManifestError(f"lora_alpha must be >= 1, got {self.lora_alpha}")
        if not (0.0 <= self.lora_dropout < 1.0):
            raise ManifestError(
                f"lora_dropout must be in [0, 1), got {self.lora_dropout}"
            )
        if not (math.isfinite(self.learning_rate) and self.learning_rate > 0):
            raise ManifestError(
                f"learning_rate must be a positive finite number, got {self.learning_rate}"
            )
        if self.batch_size < 1:
            raise ManifestError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.target_projections:
            raise ManifestError("target_projections must name at least one projection")
        for name in self.target_projections:
            if name not in KNOWN_PROJECTIONS:
                raise ManifestError(
                    f"unknown projection {name!r}; expected one of "
                    f"{', '.join(KNOWN_PROJECTIONS)}"
                )
        if len(set(self.target_projections)) != len(self.target_projections):
            raise ManifestError("target_projections contains duplicates")
        if not self.base_model_ref:
            raise ManifestError("base_model_ref must be non-empty")
        if not self.dataset_path:
            raise ManifestError("dataset_path must be non-empty")


def parse_manifest_text(text: str, origin: str = "<manifest>") -> Manifest:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        key, eq, value = line.partition("=")
        if not eq:
            raise ManifestError(f"{origin}:{lineno}: expected 'key=value', got {line!r}")
        if key not in MANIFEST_KEYS:
            raise ManifestError(f"{origin}:{lineno}: unknown manifest key {key!r}")
        if key in values:
            raise ManifestError(f"{origin}:{lineno}: duplicate manifest key {key!r}")
        values[key] = value
    missing = [key for key in MANIFEST_KEYS if key not in values]
    if missing:
        raise ManifestError(f"{origin}: missing manifest keys: {', '.join(missing)}")
    try:
        manifest = Manifest(
            base_model_ref=values["base_model_ref"],
            lora_rank=int(values["lora_rank"]),
            lora_alpha=int(values["lora_alpha"]),
            lora_dropout=float(values["lora_dropout"]),
            learning_rate=float(values["learning_rate"]),
            batch_size=int(values["batch_size"]),
            target_projections=tuple(
                part.strip()
                for part in values["target_projections"].split(",")
                if part.strip()
            ),
            dataset_path=values["dataset_path"],
        )
    except ValueError as exc:
        raise ManifestError(f"{origin}: {exc}") from exc
    manifest.validate()
    return manifest


def load_manifest(path: str | Path) -> Manifest:
    """Read and validate a manifest file."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    return parse_manifest_text(text, origin=str(path))


def resolve_dataset_path(manifest: Manifest, manifest_path: str | Path) -> Path:
    """The manifest's dataset_path is relative to the manifest's directory."""
    dataset = Path(manifest.dataset_path)
    if dataset.is_absolute():
        return dataset
    return Path(manifest_path).resolve().parent / dataset
