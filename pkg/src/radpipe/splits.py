"""Train/val/test assignment, either from an official file or by seeded ratio.

The ratio path uses largest-remainder apportionment over exact integer
arithmetic, then deals the ids out with one seeded Mersenne Twister shuffle.
Identical id sets and seeds always produce identical assignments, no matter
how the input happened to be ordered.
"""

from __future__ import annotations

import logging
import random
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from radpipe.errors import ConfigError, DataError
from radpipe.fsutil import atomic_write_text
from radpipe.preprocess import ReportPair

logger = logging.getLogger(__name__)

SPLIT_NAMES = ("train", "val", "test")

# Pinned generator identity, recorded next to every ratio assignment: CPython's
# random.Random (MT19937) with version-2 seeding, applied via a single shuffle
# of the sorted id list.
PRNG_NAME = "python-random-mt19937-v2-shuffle"

_HEADER_RE = re.compile(r"^#seed=(\d+) ratio=(\d+):(\d+):(\d+) prng=(\S+)$")


@dataclass(frozen=True)
class SplitSpec:
    """How to assign splits: ``official`` (file-driven) or ``ratio`` (seeded)."""

    mode: str = "ratio"
    ratio: tuple[int, int, int] = (2400, 292, 576)
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("official", "ratio"):
            raise ConfigError(f"split mode must be 'official' or 'ratio', got {self.mode!r}")
        ratio = tuple(int(r) for r in self.ratio)
        if len(ratio) != 3 or any(r < 0 for r in ratio) or sum(ratio) <= 0:
            raise ConfigError(f"ratio needs three non-negative parts with a positive sum: {self.ratio!r}")
        object.__setattr__(self, "ratio", ratio)
        if not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed must fit in 64 unsigned bits, got {self.seed}")


@dataclass(frozen=True)
class SplitAssignment:
    """Mapping of report id to split name, plus provenance metadata."""

    by_id: Mapping[str, str]
    unmapped_ids: tuple[str, ...] = ()
    metadata: Mapping[str, str] = field(default_factory=dict)

    def ids_for(self, split: str) -> tuple[str, ...]:
        return tuple(sorted(rid for rid, name in self.by_id.items() if name == split))

    def sizes(self) -> dict[str, int]:
        counts = {name: 0 for name in SPLIT_NAMES}
        for name in self.by_id.values():
            counts[name] += 1
        return counts


def apportion_largest_remainder(total: int, ratio: tuple[int, int, int]) -> tuple[int, ...]:
    """Split ``total`` into integer parts proportional to ``ratio``.

    Each part gets the floor of its exact quota; leftover units go to the
    largest fractional remainders, earlier parts winning ties. Computed with
    integer arithmetic only, so there is no float rounding to drift.
    """
    if total < 0:
        raise DataError(f"cannot apportion a negative total: {total}")
    denom = sum(ratio)
    if denom <= 0 or any(r < 0 for r in ratio):
        raise ConfigError(f"ratio needs non-negative parts with a positive sum: {ratio!r}")
    floors = [total * r // denom for r in ratio]
    remainders = [total * r % denom for r in ratio]
    leftover = total - sum(floors)
    order = sorted(range(len(ratio)), key=lambda i: (-remainders[i], i))
    for i in order[:leftover]:
        floors[i] += 1
    return tuple(floors)


def random_split(pairs: Iterable[ReportPair], spec: SplitSpec) -> SplitAssignment:
    """Assign splits by seeded shuffle over the sorted set of pair ids."""
    if spec.mode != "ratio":
        raise ConfigError("random_split needs a spec with mode='ratio'")
    ids = sorted({pair.report_id for pair in pairs})
    nonzero = sum(1 for r in spec.ratio if r > 0)
    if len(ids) < nonzero:
        raise DataError(
            f"cannot split {len(ids)} ids across {nonzero} nonzero ratio parts"
        )
    sizes = apportion_largest_remainder(len(ids), spec.ratio)
    shuffled = list(ids)
    random.Random(spec.seed).shuffle(shuffled)
    by_id: dict[str, str] = {}
    start = 0
    for name, size in zip(SPLIT_NAMES, sizes):
        for rid in shuffled[start : start + size]:
            by_id[rid] = name
        start += size
    metadata = {
        "mode": "ratio",
        "seed": str(spec.seed),
        "ratio": ":".join(str(r) for r in spec.ratio),
        "prng": PRNG_NAME,
    }
    return SplitAssignment(by_id, (), metadata)


def _parse_split_line(line: str, path: str | Path, lineno: int) -> tuple[str, str]:
    parts = line.split("\t")
    if len(parts) != 2 or not parts[0] or not parts[1]:
        raise DataError(f"{path}:{lineno}: expected 'report_id<TAB>split', got {line!r}")
    return parts[0], parts[1]


def apply_official_split(pairs: Iterable[ReportPair], split_file: str | Path) -> SplitAssignment:
    """Assign splits from a file of ``report_id<TAB>split`` lines.

    Pairs whose id does not appear in the file are dropped and reported in
    ``unmapped_ids``. A pair id mapped to anything other than train/val/test
    is fatal; ids that belong to no pair may carry foreign split names.
    """
    path = Path(split_file)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read split file {path}: {exc}") from exc

    mapping: dict[str, tuple[str, int]] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        rid, split = _parse_split_line(line, path, lineno)
        known = mapping.get(rid)
        if known is not None and known[0] != split:
            raise DataError(
                f"{path}:{lineno}: report {rid!r} mapped to both {known[0]!r} and {split!r}"
            )
        mapping[rid] = (split, lineno)

    by_id: dict[str, str] = {}
    unmapped: list[str] = []
    for pair in pairs:
        entry = mapping.get(pair.report_id)
        if entry is None:
            unmapped.append(pair.report_id)
            continue
        split, lineno = entry
        if split not in SPLIT_NAMES:
            raise DataError(
                f"{path}:{lineno}: report {pair.report_id!r} mapped to unknown split {split!r}"
            )
        by_id[pair.report_id] = split
    if unmapped:
        logger.warning("official split: dropped %d pairs absent from %s", len(unmapped), path)
    return SplitAssignment(by_id, tuple(unmapped), {"mode": "official", "split_file": str(path)})


def write_assignment(assignment: SplitAssignment, path: str | Path) -> None:
    """Write ``report_id<TAB>split`` lines, ids sorted, with a provenance header
    for ratio assignments."""
    lines: list[str] = []
    md = assignment.metadata
    if md.get("mode") == "ratio":
        lines.append(f"#seed={md['seed']} ratio={md['ratio']} prng={md['prng']}")
    for rid in sorted(assignment.by_id):
        lines.append(f"{rid}\t{assignment.by_id[rid]}")
    atomic_write_text(path, "".join(line + "\n" for line in lines))


def read_assignment(path: str | Path) -> SplitAssignment:
    """Read an assignment file written by :func:`write_assignment`."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read assignment file {path}: {exc}") from exc
    metadata: dict[str, str] = {}
    by_id: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        if line.startswith("#"):
            header = _HEADER_RE.match(line)
            if header:
                metadata = {
                    "mode": "ratio",
                    "seed": header.group(1),
                    "ratio": f"{header.group(2)}:{header.group(3)}:{header.group(4)}",
                    "prng": header.group(5),
                }
            continue
        rid, split = _parse_split_line(line, path, lineno)
        if split not in SPLIT_NAMES:
            raise DataError(f"{path}:{lineno}: unknown split name {split!r}")
        by_id[rid] = split
    return SplitAssignment(by_id, (), metadata)
