"""One INI file configures the whole pipeline.

Section layout::

    [corpus]            source name -> corpus root directory
    [paths]             out_dir, optional lexicon_file / split_file
    [filter]            eligibility thresholds, sections_to_remove
    [substitutions]     token -> replacement, applied during normalization
    [split]             mode, ratio, seed
    [dataset]           instruction template
    [manifest]          LoRA training manifest values
    [generation]        decoding, retry, and batching knobs
    [backend.<label>]   one completion backend per section
    [study]             raters, sampling, and study seed

Every key is checked against the known set; a typo fails loudly at load
time instead of silently falling back to a default.
"""

from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, field
from pathlib import Path

from radpipe.dataset import InstructionTemplate, TrainingManifest
from radpipe.errors import ConfigError
from radpipe.gateway import DecodingParams, RetryPolicy
from radpipe.preprocess import FilterPolicy, SubstitutionTable
from radpipe.splits import SPLIT_NAMES, SplitSpec

_SOURCE_NAME = re.compile(r"^[A-Za-z0-9._-]+$")

_KNOWN_KEYS = {
    "paths": {"out_dir", "lexicon_file", "split_file"},
    "filter": {"min_findings_words", "min_impression_words", "sections_to_remove"},
    "split": {"mode", "ratio", "seed"},
    "dataset": {"template_id", "instruction"},
    "manifest": {
        "base_model_ref",
        "lora_rank",
        "lora_alpha",
        "lora_dropout",
        "learning_rate",
        "batch_size",
        "target_projections",
    },
    "generation": {
        "split",
        "max_new_tokens",
        "temperature",
        "seed",
        "max_attempts",
        "backoff_initial_ms",
        "timeout_ms",
        "max_workers",
    },
    "backend": {"endpoint"},
    "study": {"n_per_source", "raters", "seed", "models", "include_reference"},
}


@dataclass(frozen=True)
class GenerationSettings:
    split: str = "test"
    decoding: DecodingParams = field(default_factory=DecodingParams)
    retry: RetryPolicy = field(default_factory=RetryPolicy)
    timeout_ms: int = 30_000
    max_workers: int = 1

    def __post_init__(self):
        if self.split not in SPLIT_NAMES:
            raise ConfigError(f"generation split must be one of {SPLIT_NAMES}")
        if self.max_workers < 1:
            raise ConfigError("max_workers must be >= 1")
        if self.timeout_ms < 1:
            raise ConfigError("timeout_ms must be >= 1")


@dataclass(frozen=True)
class StudySettings:
    n_per_source: int = 10
    rater_ids: tuple[str, ...] = ()
    seed: int = 0
    model_labels: tuple[str, ...] = ()  # empty means "every configured backend"
    include_reference: bool = False


@dataclass(frozen=True)
class PipelineConfig:
    corpus_roots: dict[str, Path]
    out_dir: Path | None
    lexicon_file: Path | None
    split_file: Path | None
    filter_policy: FilterPolicy
    substitutions: SubstitutionTable
    split_spec: SplitSpec
    template: InstructionTemplate
    manifest: TrainingManifest
    generation: GenerationSettings
    backends: dict[str, str]
    study: StudySettings


class _SectionReader:
    """Typed access to one INI section with key tracking."""

    def __init__(self, name: str, items: dict[str, str]):
        self.name = name
        self.items = items

    def check_known(self, known: set[str]) -> None:
        unknown = sorted(set(self.items) - known)
        if unknown:
            raise ConfigError(f"[{self.name}] has unknown keys: {', '.join(unknown)}")

    def text(self, key: str, default: str | None = None) -> str | None:
        value = self.items.get(key, default)
        return value.strip() if isinstance(value, str) else value

    def integer(self, key: str, default: int) -> int:
        raw = self.items.get(key)
        if raw is None:
            return default
        try:
            return int(raw.strip())
        except ValueError as exc:
            raise ConfigError(f"[{self.name}] {key} must be an integer, got {raw!r}") from exc

    def floating(self, key: str, default: float) -> float:
        raw = self.items.get(key)
        if raw is None:
            return default
        try:
            return float(raw.strip())
        except ValueError as exc:
            raise ConfigError(f"[{self.name}] {key} must be a number, got {raw!r}") from exc

    def boolean(self, key: str, default: bool) -> bool:
        raw = self.items.get(key)
        if raw is None:
            return default
        lowered = raw.strip().lower()
        if lowered in ("true", "yes", "1", "on"):
            return True
        if lowered in ("false", "no", "0", "off"):
            return False
        raise ConfigError(f"[{self.name}] {key} must be a boolean, got {raw!r}")

    def name_list(self, key: str) -> tuple[str, ...]:
        raw = self.items.get(key, "")
        return tuple(part.strip() for part in raw.split(",") if part.strip())


def _parse_ratio(raw: str, origin: str) -> tuple[int, int, int]:
    parts = raw.split(":")
    if len(parts) != 3:
        raise ConfigError(f"{origin}: ratio must look like 'train:val:test', got {raw!r}")
    try:
        a, b, c = (int(p.strip()) for p in parts)
    except ValueError as exc:
        raise ConfigError(f"{origin}: ratio parts must be integers, got {raw!r}") from exc
    return (a, b, c)


def load_pipeline_config(path: str | Path) -> PipelineConfig:
    """Parse and fully validate the pipeline INI file."""
    path = Path(path)
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keep source names and substitution keys as written
    try:
        with open(path, encoding="utf-8") as handle:
            parser.read_file(handle)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"malformed config file {path}: {exc}") from exc

    if parser.defaults():
        raise ConfigError(f"{path}: [DEFAULT] section is not supported")

    sections: dict[str, _SectionReader] = {}
    backends: dict[str, str] = {}
    for section in parser.sections():
        items = dict(parser.items(section))
        if section.startswith("backend."):
            label = section[len("backend."):]
            if not label:
                raise ConfigError(f"{path}: backend section needs a label: [{section}]")
            reader = _SectionReader(section, items)
            reader.check_known(_KNOWN_KEYS["backend"])
            endpoint = reader.text("endpoint")
            if not endpoint:
                raise ConfigError(f"{path}: [{section}] must set endpoint")
            if label in backends:
                raise ConfigError(f"{path}: duplicate backend label {label!r}")
            backends[label] = endpoint
            continue
        if section == "corpus":
            sections["corpus"] = _SectionReader(section, items)
            continue
        if section == "substitutions":
            sections["substitutions"] = _SectionReader(section, items)
            continue
        if section not in _KNOWN_KEYS:
            raise ConfigError(f"{path}: unknown section [{section}]")
        reader = _SectionReader(section, items)
        reader.check_known(_KNOWN_KEYS[section])
        sections[section] = reader

    def section(name: str) -> _SectionReader:
        return sections.get(name) or _SectionReader(name, {})

    corpus_roots: dict[str, Path] = {}
    for source, root in section("corpus").items.items():
        if not _SOURCE_NAME.match(source):
            raise ConfigError(
                f"{path}: source name {source!r} may only use letters, digits, . _ -"
            )
        corpus_roots[source] = Path(root.strip())

    paths = section("paths")
    out_dir = paths.text("out_dir")
    lexicon_file = paths.text("lexicon_file")
    split_file = paths.text("split_file")

    filt = section("filter")
    removed = filt.text("sections_to_remove")
    filter_policy = FilterPolicy(
        min_findings_words=filt.integer("min_findings_words", 10),
        min_impression_words=filt.integer("min_impression_words", 2),
        sections_to_remove=(
            frozenset(filt.name_list("sections_to_remove")) if removed is not None else None
        ),
    )

    substitutions = SubstitutionTable(section("substitutions").items)

    split = section("split")
    split_spec = SplitSpec(
        mode=split.text("mode", "ratio"),
        ratio=_parse_ratio(split.text("ratio", "2400:292:576"), f"{path} [split]"),
        seed=split.integer("seed", 0),
    )
    if split_spec.mode == "official" and not split_file:
        raise ConfigError(f"{path}: [split] mode=official needs [paths] split_file")

    ds = section("dataset")
    template = InstructionTemplate(
        template_id=ds.text("template_id", InstructionTemplate().template_id),
        instruction_text=ds.text("instruction", InstructionTemplate().instruction_text),
    )

    man = section("manifest")
    defaults = TrainingManifest()
    manifest = TrainingManifest(
        base_model_ref=man.text("base_model_ref", defaults.base_model_ref),
        lora_rank=man.integer("lora_rank", defaults.lora_rank),
        lora_alpha=man.integer("lora_alpha", defaults.lora_alpha),
        lora_dropout=man.floating("lora_dropout", defaults.lora_dropout),
        learning_rate=man.floating("learning_rate", defaults.learning_rate),
        batch_size=man.integer("batch_size", defaults.batch_size),
        target_projections=(
            man.name_list("target_projections")
            if man.text("target_projections") is not None
            else defaults.target_projections
        ),
    )

    gen = section("generation")
    generation = GenerationSettings(
        split=gen.text("split", "test"),
        decoding=DecodingParams(
            max_new_tokens=gen.integer("max_new_tokens", 256),
            temperature=gen.floating("temperature", 0.0),
            seed=gen.integer("seed", 0),
        ),
        retry=RetryPolicy(
            max_attempts=gen.integer("max_attempts", 3),
            backoff_initial_ms=gen.integer("backoff_initial_ms", 250),
        ),
        timeout_ms=gen.integer("timeout_ms", 30_000),
        max_workers=gen.integer("max_workers", 1),
    )

    st = section("study")
    study = StudySettings(
        n_per_source=st.integer("n_per_source", 10),
        rater_ids=st.name_list("raters"),
        seed=st.integer("seed", 0),
        model_labels=st.name_list("models"),
        include_reference=st.boolean("include_reference", False),
    )
    unknown_models = [m for m in study.model_labels if m not in backends]
    if unknown_models:
        raise ConfigError(
            f"{path}: [study] models not defined as backends: {', '.join(unknown_models)}"
        )

    return PipelineConfig(
        corpus_roots=corpus_roots,
        out_dir=Path(out_dir) if out_dir else None,
        lexicon_file=Path(lexicon_file) if lexicon_file else None,
        split_file=Path(split_file) if split_file else None,
        filter_policy=filter_policy,
        substitutions=substitutions,
        split_spec=split_spec,
        template=template,
        manifest=manifest,
        generation=generation,
        backends=backends,
        study=study,
    )
