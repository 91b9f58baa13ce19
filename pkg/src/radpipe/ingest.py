"""Loading and sectioning of raw radiology report files.

A corpus is a directory tree of plain-text files, one report per file.
Reports are segmented into labeled sections at header lines such as
``FINDINGS:`` or ``Impression:``. Text before the first recognized header
is kept under the ``preamble`` pseudo-section so nothing is lost.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

from radpipe.errors import ConfigError, DataError
from radpipe.fsutil import atomic_write_text

logger = logging.getLogger(__name__)

PREAMBLE_LABEL = "preamble"

# Spellings routinely seen in hospital exports, mapped to canonical labels.
# Any other line shaped like "WORD:" in all caps is passed through with the
# word lowercased as its label, so unusual headers still split sections.
DEFAULT_LEXICON: dict[str, str] = {
    "findings": "findings",
    "finding": "findings",
    "impression": "impression",
    "impressions": "impression",
}

_PASSTHROUGH_HEADER = re.compile(r"^([A-Z]+):(.*)$")


@dataclass(frozen=True)
class RawReport:
    """One report exactly as read from disk."""

    report_id: str
    source: str
    text: str


@dataclass(frozen=True)
class Section:
    label: str
    body: str


@dataclass(frozen=True)
class ParsedReport:
    report_id: str
    source: str
    sections: tuple[Section, ...]

    def body(self, label: str) -> str | None:
        """Body of the first section with ``label``, or None if absent."""
        for section in self.sections:
            if section.label == label:
                return section.body
        return None

    def labels(self) -> tuple[str, ...]:
        return tuple(section.label for section in self.sections)


@dataclass(frozen=True)
class SkippedFile:
    path: str
    reason: str


@dataclass(frozen=True)
class CorpusLoad:
    """Result of loading one corpus directory: reports plus skip records."""

    reports: tuple[RawReport, ...]
    skipped: tuple[SkippedFile, ...]

    @property
    def skip_count(self) -> int:
        return len(self.skipped)


def load_corpus(root: str | Path, source: str) -> CorpusLoad:
    """Load every file under ``root`` as one :class:`RawReport`.

    The report id is the file path relative to ``root`` with the final
    extension removed, always in forward-slash form. Files that cannot be
    read or that contain NUL bytes are skipped with a per-file record;
    everything else is decoded as UTF-8 with invalid bytes replaced.
    Reports come back sorted by report id, so the result depends only on
    the set of files, not on directory enumeration order.
    """
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"corpus root is not a readable directory: {root}")
    try:
        paths = sorted(p for p in root.rglob("*") if p.is_file())
    except OSError as exc:
        raise DataError(f"cannot list corpus root {root}: {exc}") from exc

    reports: list[RawReport] = []
    skipped: list[SkippedFile] = []
    first_path: dict[str, Path] = {}
    for path in paths:
        report_id = path.relative_to(root).with_suffix("").as_posix()
        if report_id in first_path:
            raise DataError(
                f"duplicate report id {report_id!r}: {first_path[report_id]} and {path}"
            )
        first_path[report_id] = path
        try:
            data = path.read_bytes()
        except OSError as exc:
            skipped.append(SkippedFile(str(path), f"unreadable: {exc}"))
            continue
        if b"\x00" in data:
            skipped.append(SkippedFile(str(path), "binary content (NUL byte)"))
            continue
        reports.append(RawReport(report_id, source, data.decode("utf-8", errors="replace")))

    if skipped:
        logger.warning("corpus %s: skipped %d of %d files", source, len(skipped), len(paths))
    reports.sort(key=lambda r: r.report_id)
    return CorpusLoad(tuple(reports), tuple(skipped))


def load_lexicon(path: str | Path) -> dict[str, str]:
    """Read a header lexicon file: one ``SPELLING -> canonical_label`` per line.

    Blank lines and lines starting with ``#`` are ignored. Both sides are
    case-folded; matching at parse time is case-insensitive anyway.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read lexicon file {path}: {exc}") from exc
    mapping: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        spelling, arrow, canonical = line.partition("->")
        if not arrow:
            raise ConfigError(
                f"{path}:{lineno}: expected 'SPELLING -> canonical_label', got {line!r}"
            )
        spelling = spelling.strip().lower()
        canonical = canonical.strip().lower()
        if not spelling or not canonical:
            raise ConfigError(f"{path}:{lineno}: empty spelling or label in {line!r}")
        mapping[spelling] = canonical
    return mapping


def match_header(line: str, lexicon: Mapping[str, str] | None = None) -> tuple[str, str] | None:
    """Decide whether ``line`` opens a new section.

    Returns ``(canonical_label, inline_rest)`` when the line, after optional
    leading whitespace, starts with a lexicon spelling followed by a colon
    (case-insensitive), or with an all-caps single word followed by a colon.
    ``inline_rest`` is everything after the colon and becomes the first body
    line of the new section. Returns None for ordinary body lines.
    """
    lexicon = DEFAULT_LEXICON if lexicon is None else lexicon
    stripped = line.lstrip(" \t")
    lowered = stripped.lower()
    for spelling, canonical in lexicon.items():
        prefix = spelling.lower() + ":"
        if lowered.startswith(prefix):
            return canonical, stripped[len(prefix):]
    caps = _PASSTHROUGH_HEADER.match(stripped)
    if caps:
        return caps.group(1).lower(), caps.group(2)
    return None


def parse_report(raw: RawReport, lexicon: Mapping[str, str] | None = None) -> ParsedReport:
    """Split one report into labeled sections.

    Every line belongs to exactly one section. A repeated label is merged
    into its first occurrence with a blank line between the parts, and
    sections whose body trims to nothing are dropped.
    """
    segments: list[tuple[str, list[str]]] = [(PREAMBLE_LABEL, [])]
    for line in raw.text.splitlines():
        header = match_header(line, lexicon)
        if header is None:
            segments[-1][1].append(line)
        else:
            label, inline_rest = header
            segments.append((label, [inline_rest]))

    position: dict[str, int] = {}
    sections: list[Section] = []
    for label, lines in segments:
        body = "\n".join(lines).strip()
        if not body:
            continue
        if label in position:
            index = position[label]
            sections[index] = Section(label, sections[index].body + "\n\n" + body)
        else:
            position[label] = len(sections)
            sections.append(Section(label, body))
    return ParsedReport(raw.report_id, raw.source, tuple(sections))


def parse_corpus(
    reports: Iterable[RawReport], lexicon: Mapping[str, str] | None = None
) -> list[ParsedReport]:
    return [parse_report(raw, lexicon) for raw in reports]


# --- JSONL persistence for parsed reports (one report per line) ---


def parsed_to_dict(report: ParsedReport) -> dict:
    return {
        "report_id": report.report_id,
        "source": report.source,
        "sections": [{"label": s.label, "body": s.body} for s in report.sections],
    }


def parsed_from_dict(payload: dict) -> ParsedReport:
    try:
        sections = tuple(Section(s["label"], s["body"]) for s in payload["sections"])
        return ParsedReport(payload["report_id"], payload["source"], sections)
    except (KeyError, TypeError) as exc:
        raise DataError(f"malformed parsed-report row: {exc}") from exc


def write_parsed(reports: Iterable[ParsedReport], path: str | Path) -> None:
    lines = [json.dumps(parsed_to_dict(r), ensure_ascii=False) for r in reports]
    atomic_write_text(path, "".join(line + "\n" for line in lines))


def read_parsed(path: str | Path) -> list[ParsedReport]:
    out: list[ParsedReport] = []
    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                payload = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            out.append(parsed_from_dict(payload))
    return out
