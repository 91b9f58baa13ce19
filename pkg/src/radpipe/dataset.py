"""Instruction-tuning records and the LoRA training manifest.

Records serialize as JSONL with a fixed key order so reruns are
byte-identical; the manifest is a flat ``key=value`` file that a trainer
can read without any JSON machinery.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from radpipe.errors import ConfigError, DataError
from radpipe.fsutil import atomic_write_text
from radpipe.preprocess import ReportPair
from radpipe.splits import SPLIT_NAMES, SplitAssignment

DEFAULT_INSTRUCTION = "Derive the impression from findings in the radiology report"
DEFAULT_TEMPLATE_ID = "findings-to-impression-v1"

# Abstract attention projection names; a trainer maps these onto whatever its
# model family calls them.
PROJECTION_KINDS = ("query", "value", "key", "output")


@dataclass(frozen=True)
class InstructionTemplate:
    template_id: str = DEFAULT_TEMPLATE_ID
    instruction_text: str = DEFAULT_INSTRUCTION

    def __post_init__(self):
        if not self.template_id or not self.instruction_text:
            raise ConfigError("template_id and instruction_text must be non-empty")


@dataclass(frozen=True)
class RecordMeta:
    report_id: str
    source: str
    split: str
    template_id: str


@dataclass(frozen=True)
class InstructionRecord:
    instruction: str
    input: str
    output: str
    meta: RecordMeta

    def __post_init__(self):
        if not self.input or not self.output:
            raise DataError(
                f"record {self.meta.report_id!r} has an empty input or output"
            )


def build_records(
    pairs: Iterable[ReportPair],
    assignment: SplitAssignment,
    template: InstructionTemplate | None = None,
) -> dict[str, list[InstructionRecord]]:
    """Turn pairs into records grouped by split, sorted by report id.

    Every pair id must be present in the assignment; unmapped pairs are a
    caller bug here, not something to paper over.
    """
    template = InstructionTemplate() if template is None else template
    grouped: dict[str, list[InstructionRecord]] = {name: [] for name in SPLIT_NAMES}
    for pair in pairs:
        split = assignment.by_id.get(pair.report_id)
        if split is None:
            raise DataError(f"pair {pair.report_id!r} is missing from the split assignment")
        grouped[split].append(
            InstructionRecord(
                instruction=template.instruction_text,
                input=pair.findings,
                output=pair.impression,
                meta=RecordMeta(pair.report_id, pair.source, split, template.template_id),
            )
        )
    for records in grouped.values():
        records.sort(key=lambda r: r.meta.report_id)
    return grouped


def serialize_records(records: Iterable[InstructionRecord]) -> bytes:
    """UTF-8 JSONL, one record per line, keys always in the same order."""
    lines = []
    for record in records:
        payload = {
            "instruction": record.instruction,
            "input": record.input,
            "output": record.output,
            "meta": {
                "report_id": record.meta.report_id,
                "source": record.meta.source,
                "split": record.meta.split,
                "template_id": record.meta.template_id,
            },
        }
        lines.append(json.dumps(payload, ensure_ascii=False))
    return "".join(line + "\n" for line in lines).encode("utf-8")


_META_KEYS = ("report_id", "source", "split", "template_id")


def _record_from_payload(payload: dict, lineno: int) -> InstructionRecord:
    for key in ("instruction", "input", "output", "meta"):
        if key not in payload:
            raise DataError(f"record at line {lineno} is missing required key {key!r}")
    meta = payload["meta"]
    if not isinstance(meta, dict):
        raise DataError(f"record at line {lineno}: 'meta' must be an object")
    for key in _META_KEYS:
        if key not in meta:
            raise DataError(f"record at line {lineno} is missing required key 'meta.{key}'")
    for key in ("instruction", "input", "output"):
        if not isinstance(payload[key], str):
            raise DataError(f"record at line {lineno}: {key!r} must be a string")
    try:
        return InstructionRecord(
            instruction=payload["instruction"],
            input=payload["input"],
            output=payload["output"],
            meta=RecordMeta(*(meta[k] for k in _META_KEYS)),
        )
    except DataError as exc:
        raise DataError(f"record at line {lineno}: {exc}") from exc


def parse_records(data: bytes | str) -> list[InstructionRecord]:
    """Inverse of :func:`serialize_records`; errors carry 1-based line numbers."""
    text = data.decode("utf-8") if isinstance(data, bytes) else data
    records: list[InstructionRecord] = []
    for lineno, line in enumerate(text.split("\n"), start=1):
        if not line.strip():
            continue
        try:
            payload = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"record at line {lineno} is not valid JSON: {exc}") from exc
        if not isinstance(payload, dict):
            raise DataError(f"record at line {lineno} must be a JSON object")
        records.append(_record_from_payload(payload, lineno))
    return records


@dataclass(frozen=True)
class TrainingManifest:
    """Everything a LoRA trainer needs, as plain values.

    Defaults follow the reference fine-tuning recipe: rank-8 adapters with
    alpha 16 and dropout 0.05 on the query and value projections, batch size
    128 at learning rate 3e-4.
    """

    base_model_ref: str = "alpaca-7b"
    lora_rank: int = 8
    lora_alpha: int = 16
    lora_dropout: float = 0.05
    target_projections: tuple[str, ...] = ("query", "value")
    learning_rate: float = 3e-4
    batch_size: int = 128
    dataset_path: str = ""

    def __post_init__(self):
        object.__setattr__(self, "target_projections", tuple(self.target_projections))
        if not self.base_model_ref:
            raise ConfigError("base_model_ref must be non-empty")
        if self.lora_rank < 1 or self.lora_alpha < 1 or self.batch_size < 1:
            raise ConfigError("lora_rank, lora_alpha, and batch_size must be >= 1")
        if not 0.0 <= self.lora_dropout < 1.0:
            raise ConfigError(f"lora_dropout must be in [0, 1), got {self.lora_dropout}")
        if self.learning_rate <= 0.0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if not self.target_projections:
            raise ConfigError("target_projections must name at least one projection")
        unknown = [p for p in self.target_projections if p not in PROJECTION_KINDS]
        if unknown:
            raise ConfigError(
                f"unknown projection names {unknown!r}; valid: {', '.join(PROJECTION_KINDS)}"
            )
        if len(set(self.target_projections)) != len(self.target_projections):
            raise ConfigError("target_projections must not repeat")


_MANIFEST_KEYS = (
    "base_model_ref",
    "lora_rank",
    "lora_alpha",
    "lora_dropout",
    "learning_rate",
    "batch_size",
    "target_projections",
    "dataset_path",
)


def manifest_to_text(manifest: TrainingManifest) -> str:
    return "".join(
        [
            f"base_model_ref={manifest.base_model_ref}\n",
            f"lora_rank={manifest.lora_rank}\n",
            f"lora_alpha={manifest.lora_alpha}\n",
            f"lora_dropout={manifest.lora_dropout!r}\n",
            f"learning_rate={manifest.learning_rate!r}\n",
            f"batch_size={manifest.batch_size}\n",
            f"target_projections={','.join(manifest.target_projections)}\n",
            f"dataset_path={manifest.dataset_path}\n",
        ]
    )


def emit_manifest(manifest: TrainingManifest, path: str | Path) -> None:
    """Write the flat ``key=value`` manifest file."""
    atomic_write_text(path, manifest_to_text(manifest))


def parse_manifest_text(text: str, origin: str = "<manifest>") -> TrainingManifest:
    values: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        key, eq, value = line.partition("=")
        if not eq:
            raise ConfigError(f"{origin}:{lineno}: expected 'key=value', got {line!r}")
        if key not in _MANIFEST_KEYS:
            raise ConfigError(f"{origin}:{lineno}: unknown manifest key {key!r}")
        if key in values:
            raise ConfigError(f"{origin}:{lineno}: duplicate manifest key {key!r}")
        values[key] = value
    missing = [key for key in _MANIFEST_KEYS if key not in values]
    if missing:
        raise ConfigError(f"{origin}: missing manifest keys: {', '.join(missing)}")
    try:
        return TrainingManifest(
            base_model_ref=values["base_model_ref"],
            lora_rank=int(values["lora_rank"]),
            lora_alpha=int(values["lora_alpha"]),
            lora_dropout=float(values["lora_dropout"]),
            target_projections=tuple(
                p for p in values["target_projections"].split(",") if p
            ),
            learning_rate=float(values["learning_rate"]),
            batch_size=int(values["batch_size"]),
            dataset_path=values["dataset_path"],
        )
    except ValueError as exc:
        raise ConfigError(f"{origin}: bad numeric value: {exc}") from exc


def load_manifest(path: str | Path) -> TrainingManifest:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read manifest {path}: {exc}") from exc
    return parse_manifest_text(text, origin=str(path))
