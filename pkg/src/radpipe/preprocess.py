"""Eligibility filtering of parsed reports into (findings, impression) pairs.

A report survives only when it has both target sections, its findings run
at least ``min_findings_words`` words, and its impression at least
``min_impression_words`` words. The checks run in that order and the first
failed one names the exclusion, so audit counts are unambiguous.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping

from radpipe.errors import ConfigError, DataError
from radpipe.fsutil import atomic_write_text
from radpipe.ingest import ParsedReport

FINDINGS_LABEL = "findings"
IMPRESSION_LABEL = "impression"

_SPACE_RUNS = re.compile(r"[ \t]+")
_NEWLINE_RUNS = re.compile(r"\n{3,}")
_TOKEN_PARTS = re.compile(r"(\s+)")


def word_count(text: str) -> int:
    """Number of maximal non-whitespace runs in ``text``."""
    return len(text.split())


class SubstitutionTable:
    """Case-insensitive whole-token replacements, e.g. ``c/w -> consistent with``.

    Keys must be single tokens (no whitespace). Replacement values have their
    internal whitespace collapsed so that applying the table twice gives the
    same text as applying it once.
    """

    def __init__(self, mapping: Mapping[str, str] | None = None):
        self._mapping: dict[str, str] = {}
        for key, value in (mapping or {}).items():
            if not key or key.split() != [key]:
                raise ConfigError(
                    f"substitution key must be one non-empty token, got {key!r}"
                )
            folded = key.lower()
            if folded in self._mapping:
                raise ConfigError(f"substitution key {key!r} repeats after case-folding")
            self._mapping[folded] = " ".join(value.split())

    def __len__(self) -> int:
        return len(self._mapping)

    def as_dict(self) -> dict[str, str]:
        return dict(self._mapping)

    def apply(self, text: str) -> str:
        if not self._mapping:
            return text
        parts = _TOKEN_PARTS.split(text)
        return "".join(self._mapping.get(part.lower(), part) for part in parts)


def normalize_text(text: str, table: SubstitutionTable | None = None) -> str:
    """Canonical whitespace plus optional terminology substitution.

    Runs of spaces and tabs collapse to one space, runs of three or more
    newlines collapse to two, outer whitespace is trimmed, and then the
    substitution table (if any) is applied once.
    """
    text = _SPACE_RUNS.sub(" ", text)
    text = _NEWLINE_RUNS.sub("\n\n", text)
    text = text.strip()
    if table is not None:
        text = table.apply(text)
    return text


@dataclass(frozen=True)
class FilterPolicy:
    """Eligibility thresholds and the section labels to discard.

    ``sections_to_remove`` of None means "everything except findings and
    impression", which is the stock behavior.
    """

    min_findings_words: int = 10
    min_impression_words: int = 2
    sections_to_remove: frozenset[str] | None = None

    def __post_init__(self):
        if self.min_findings_words < 1 or self.min_impression_words < 1:
            raise ConfigError("word-count minimums must be >= 1")
        if self.sections_to_remove is not None:
            object.__setattr__(self, "sections_to_remove", frozenset(self.sections_to_remove))

    def keeps(self, label: str) -> bool:
        if self.sections_to_remove is None:
            return label in (FINDINGS_LABEL, IMPRESSION_LABEL)
        return label not in self.sections_to_remove


class ExclusionReason(str, Enum):
    MISSING_SECTION = "MissingSection"
    FINDINGS_TOO_SHORT = "FindingsTooShort"
    IMPRESSION_TOO_SHORT = "ImpressionTooShort"


@dataclass(frozen=True)
class ExclusionRecord:
    report_id: str
    reason: ExclusionReason


@dataclass(frozen=True)
class ReportPair:
    """An eligible report reduced to its normalized findings and impression."""

    report_id: str
    source: str
    findings: str
    impression: str


@dataclass(frozen=True)
class FilterSummary:
    total: int
    eligible: int
    excluded: Mapping[ExclusionReason, int]

    def as_dict(self) -> dict:
        return {
            "total": self.total,
            "eligible": self.eligible,
            "excluded": {reason.value: self.excluded[reason] for reason in ExclusionReason},
        }


@dataclass(frozen=True)
class FilterOutcome:
    pairs: tuple[ReportPair, ...]
    exclusions: tuple[ExclusionRecord, ...]
    summary: FilterSummary


def filter_report(
    parsed: ParsedReport,
    policy: FilterPolicy | None = None,
    table: SubstitutionTable | None = None,
) -> ReportPair | ExclusionRecord:
    """Judge one report; return its pair or the first exclusion that applies.

    Both bodies are normalized before the word counts are taken, and the
    thresholds are strict "fewer than", so a findings of exactly
    ``min_findings_words`` words passes.
    """
    policy = FilterPolicy() if policy is None else policy
    kept = {s.label: s.body for s in parsed.sections if policy.keeps(s.label)}
    findings = kept.get(FINDINGS_LABEL)
    impression = kept.get(IMPRESSION_LABEL)
    if findings is None or impression is None:
        return ExclusionRecord(parsed.report_id, ExclusionReason.MISSING_SECTION)
    findings = normalize_text(findings, table)
    impression = normalize_text(impression, table)
    if word_count(findings) < policy.min_findings_words:
        return ExclusionRecord(parsed.report_id, ExclusionReason.FINDINGS_TOO_SHORT)
    if word_count(impression) < policy.min_impression_words:
        return ExclusionRecord(parsed.report_id, ExclusionReason.IMPRESSION_TOO_SHORT)
    return ReportPair(parsed.report_id, parsed.source, findings, impression)


def filter_corpus(
    parsed_reports: Iterable[ParsedReport],
    policy: FilterPolicy | None = None,
    table: SubstitutionTable | None = None,
) -> FilterOutcome:
    """Partition reports into pairs and exclusion records, preserving order."""
    pairs: list[ReportPair] = []
    exclusions: list[ExclusionRecord] = []
    counts = {reason: 0 for reason in ExclusionReason}
    total = 0
    for parsed in parsed_reports:
        total += 1
        verdict = filter_report(parsed, policy, table)
        if isinstance(verdict, ReportPair):
            pairs.append(verdict)
        else:
            exclusions.append(verdict)
            counts[verdict.reason] += 1
    summary = FilterSummary(total=total, eligible=len(pairs), excluded=counts)
    return FilterOutcome(tuple(pairs), tuple(exclusions), summary)


# --- JSONL persistence for pairs and exclusion records ---


def pair_to_dict(pair: ReportPair) -> dict:
    return {
        "report_id": pair.report_id,
        "source": pair.source,
        "findings": pair.findings,
        "impression": pair.impression,
    }


def pair_from_dict(payload: dict) -> ReportPair:
    try:
        return ReportPair(
            payload["report_id"], payload["source"], payload["findings"], payload["impression"]
        )
    except (KeyError, TypeError) as exc:
        raise DataError(f"malformed pair row: {exc}") from exc


def write_pairs(pairs: Iterable[ReportPair], path: str | Path) -> None:
    lines = [json.dumps(pair_to_dict(p), ensure_ascii=False) for p in pairs]
    atomic_write_text(path, "".join(line + "\n" for line in lines))


def read_pairs(path: str | Path) -> list[ReportPair]:
    out: list[ReportPair] = []
    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                payload = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            out.append(pair_from_dict(payload))
    return out


def write_exclusions(records: Iterable[ExclusionRecord], path: str | Path) -> None:
    lines = [
        json.dumps({"report_id": r.report_id, "reason": r.reason.value}) for r in records
    ]
    atomic_write_text(path, "".join(line + "\n" for line in lines))
