"""Blind multi-rater scoring of generated impressions.

A study samples report ids per source, pairs each sampled report with every
candidate model's generation, and hides both behind opaque item ids. Raters
see findings and a candidate impression, nothing else. Scores cover five
rubric metrics on a 1..5 integer scale; results aggregate to per-model
means over all sampled reports and raters.
"""

from __future__ import annotations

import csv
import hashlib
import io
import random
import secrets
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, MutableMapping, Sequence

from radpipe.errors import AlreadyRated, DataError, IncompleteStudy
from radpipe.preprocess import ReportPair


class Metric(str, Enum):
    UNDERSTANDABILITY = "understandability"
    COHERENCE = "coherence"
    RELEVANCE = "relevance"
    CONCISENESS = "conciseness"
    CLINICAL_UTILITY = "clinical_utility"


# Canonical metric order for exports and comparisons.
ALL_METRICS: tuple[Metric, ...] = tuple(Metric)

SCORE_MIN = 1
SCORE_MAX = 5

STATUS_OPEN = "open"
STATUS_CLOSED = "closed"

# Pinned generator identity for sampling and per-rater ordering.
PRNG_NAME = "python-random-mt19937-v2-sha256-scoped"


def _scoped_rng(seed: int, *scope: str) -> random.Random:
    """A PRNG whose stream depends on the seed and a string scope.

    Scoping through sha256 keeps per-source sampling and per-rater ordering
    independent of each other and of dict iteration order.
    """
    material = ":".join([str(seed), *scope]).encode("utf-8")
    return random.Random(int.from_bytes(hashlib.sha256(material).digest()[:8], "big"))


@dataclass(frozen=True)
class RatingItem:
    """What a rater is shown: an opaque id, findings, and one candidate."""

    item_id: str
    findings: str
    candidate_impression: str
    reference_impression: str | None = None


@dataclass(frozen=True)
class RubricScore:
    """One rater's scores for one item across all five metrics."""

    item_id: str
    rater_id: str
    scores: Mapping[Metric, int]
    submitted_at: str
    submission_id: str

    def __post_init__(self):
        if not self.item_id or not self.rater_id or not self.submission_id:
            raise DataError("item_id, rater_id, and submission_id must be non-empty")
        try:
            normalized = {Metric(k): v for k, v in dict(self.scores).items()}
        except ValueError as exc:
            raise DataError(f"unknown metric in scores: {exc}") from exc
        missing = [m.value for m in ALL_METRICS if m not in normalized]
        if missing:
            raise DataError(f"scores missing metrics: {', '.join(missing)}")
        if len(normalized) != len(ALL_METRICS):
            raise DataError("scores must cover exactly the five rubric metrics")
        for metric, value in normalized.items():
            if type(value) is not int or not SCORE_MIN <= value <= SCORE_MAX:
                raise DataError(
                    f"score for {metric.value} must be an integer in "
                    f"[{SCORE_MIN}, {SCORE_MAX}], got {value!r}"
                )
        object.__setattr__(self, "scores", normalized)


@dataclass
class Study:
    study_id: str
    sources: tuple[str, ...]
    n_per_source: int
    sampled_report_ids: tuple[str, ...]
    model_labels: tuple[str, ...]
    rater_ids: tuple[str, ...]
    sample_seed: int
    blinding_map: dict[tuple[str, str], str]
    items: dict[str, RatingItem]
    per_rater_item_order: dict[str, tuple[str, ...]]
    status: str = STATUS_OPEN
    metadata: dict[str, str] = field(default_factory=dict)

    def cell_of(self, item_id: str) -> tuple[str, str]:
        """(report_id, model_label) behind an item id. Not for rater eyes."""
        for cell, iid in self.blinding_map.items():
            if iid == item_id:
                return cell
        raise DataError(f"unknown item id {item_id!r}")


# Scores keyed by (rater_id, item_id); at most one entry per key ever.
ScoreStore = MutableMapping[tuple[str, str], RubricScore]


def create_study(
    pairs_by_source: Mapping[str, Sequence[ReportPair]],
    generations: Mapping[tuple[str, str], str],
    model_labels: Sequence[str],
    rater_ids: Sequence[str],
    seed: int,
    n_per_source: int = 10,
    *,
    study_id: str | None = None,
    include_reference: bool = False,
) -> Study:
    """Sample reports, blind the (report, model) grid, and fix rater orders.

    ``generations`` maps (report_id, model_label) to candidate text and must
    cover every sampled cell. Sampling depends only on the per-source id
    sets and the seed; item ids are freshly random per study so two studies
    over the same inputs never share a blinding map.
    """
    if n_per_source < 1:
        raise DataError(f"n_per_source must be >= 1, got {n_per_source}")
    if not pairs_by_source:
        raise DataError("a study needs at least one source of report pairs")
    labels = list(model_labels)
    if not labels or len(set(labels)) != len(labels) or not all(labels):
        raise DataError(f"model_labels must be non-empty and unique: {labels!r}")
    raters = list(rater_ids)
    if not raters or len(set(raters)) != len(raters) or not all(raters):
        raise DataError(f"rater_ids must be non-empty and unique: {raters!r}")

    pair_by_id: dict[str, ReportPair] = {}
    sampled: list[str] = []
    for source in sorted(pairs_by_source):
        pairs = list(pairs_by_source[source])
        ids = sorted({p.report_id for p in pairs})
        if len(ids) != len(pairs):
            raise DataError(f"source {source!r} repeats a report id")
        for pair in pairs:
            if pair.report_id in pair_by_id:
                raise DataError(
                    f"report id {pair.report_id!r} appears in more than one source"
                )
            pair_by_id[pair.report_id] = pair
        if len(ids) < n_per_source:
            raise DataError(
                f"source {source!r} has {len(ids)} pairs, needs {n_per_source}"
            )
        sampled.extend(_scoped_rng(seed, "sample", source).sample(ids, n_per_source))

    missing = [
        (rid, label)
        for rid in sampled
        for label in labels
        if (rid, label) not in generations
    ]
    if missing:
        preview = ", ".join(f"{r}/{m}" for r, m in missing[:5])
        raise DataError(
            f"{len(missing)} sampled (report, model) cells have no stored "
            f"generation: {preview}"
        )

    blinding_map: dict[tuple[str, str], str] = {}
    items: dict[str, RatingItem] = {}
    for rid in sampled:
        for label in labels:
            item_id = secrets.token_hex(8)
            while item_id in items:
                item_id = secrets.token_hex(8)
            blinding_map[(rid, label)] = item_id
            items[item_id] = RatingItem(
                item_id=item_id,
                findings=pair_by_id[rid].findings,
                candidate_impression=generations[(rid, label)],
                reference_impression=(
                    pair_by_id[rid].impression if include_reference else None
                ),
            )

    per_rater_item_order: dict[str, tuple[str, ...]] = {}
    for rater in raters:
        order = sorted(items)
        _scoped_rng(seed, "order", rater).shuffle(order)
        per_rater_item_order[rater] = tuple(order)

    return Study(
        study_id=study_id or secrets.token_hex(8),
        sources=tuple(sorted(pairs_by_source)),
        n_per_source=n_per_source,
        sampled_report_ids=tuple(sampled),
        model_labels=tuple(labels),
        rater_ids=tuple(raters),
        sample_seed=seed,
        blinding_map=blinding_map,
        items=items,
        per_rater_item_order=per_rater_item_order,
        metadata={
            "prng": PRNG_NAME,
            "include_reference": str(include_reference).lower(),
            "report_weighting": "uniform",
        },
    )


def next_item(study: Study, scores: Mapping[tuple[str, str], RubricScore], rater_id: str) -> RatingItem | None:
    """First unscored item in this rater's fixed order, or None when done."""
    if rater_id not in study.rater_ids:
        raise DataError(f"unknown rater {rater_id!r}")
    if study.status != STATUS_OPEN:
        raise DataError(f"study {study.study_id} is {study.status}")
    for item_id in study.per_rater_item_order[rater_id]:
        if (rater_id, item_id) not in scores:
            return study.items[item_id]
    return None


def check_submission(
    study: Study, scores: Mapping[tuple[str, str], RubricScore], score: RubricScore
) -> str:
    """Validate a submission without storing it.

    Returns "accepted" for a new (rater, item) cell and "duplicate" when the
    identical submission id landed there before. A different submission id
    on a scored cell raises :class:`AlreadyRated`.
    """
    if study.status != STATUS_OPEN:
        raise DataError(f"study {study.study_id} is {study.status}")
    if score.rater_id not in study.rater_ids:
        raise DataError(f"unknown rater {score.rater_id!r}")
    if score.item_id not in study.items:
        raise DataError(f"unknown item {score.item_id!r}")
    existing = scores.get((score.rater_id, score.item_id))
    if existing is not None:
        if existing.submission_id == score.submission_id:
            return "duplicate"
        raise AlreadyRated(
            f"rater {score.rater_id!r} already scored item {score.item_id!r} "
            f"under submission {existing.submission_id!r}"
        )
    return "accepted"


def submit_rating(study: Study, scores: ScoreStore, score: RubricScore) -> str:
    """Store a rating; re-sending the same submission id is a no-op."""
    status = check_submission(study, scores, score)
    if status == "accepted":
        scores[(score.rater_id, score.item_id)] = score
    return status


@dataclass(frozen=True)
class EvaluationResult:
    study_id: str
    means: Mapping[tuple[str, Metric], float]
    per_report: Mapping[tuple[str, str, Metric], float]
    n_reports: int
    n_raters: int
    missing_cells: tuple[tuple[str, str], ...] = ()
    metadata: Mapping[str, str] = field(default_factory=dict)


def aggregate_results(
    study: Study, scores: Mapping[tuple[str, str], RubricScore], *, force: bool = False
) -> EvaluationResult:
    """Per-model metric means over every sampled report and rater.

    With a complete grid, each mean is the plain sum over reports and raters
    divided by (n_reports * n_raters); reports all weigh the same. ``force``
    averages whatever is present and discloses the missing (rater, item)
    cells instead of refusing.
    """
    missing = [
        (rater, item_id)
        for rater in study.rater_ids
        for item_id in sorted(study.items)
        if (rater, item_id) not in scores
    ]
    if missing and not force:
        raise IncompleteStudy(missing)

    cell_of = {item_id: cell for cell, item_id in study.blinding_map.items()}
    sums: dict[tuple[str, Metric], int] = {}
    counts: dict[tuple[str, Metric], int] = {}
    report_sums: dict[tuple[str, str, Metric], int] = {}
    report_counts: dict[tuple[str, str, Metric], int] = {}
    for (rater, item_id), score in scores.items():
        report_id, label = cell_of[item_id]
        for metric, value in score.scores.items():
            key = (label, metric)
            sums[key] = sums.get(key, 0) + value
            counts[key] = counts.get(key, 0) + 1
            rkey = (label, report_id, metric)
            report_sums[rkey] = report_sums.get(rkey, 0) + value
            report_counts[rkey] = report_counts.get(rkey, 0) + 1

    means = {key: sums[key] / counts[key] for key in sums}
    per_report = {key: report_sums[key] / report_counts[key] for key in report_sums}
    return EvaluationResult(
        study_id=study.study_id,
        means=means,
        per_report=per_report,
        n_reports=len(study.sampled_report_ids),
        n_raters=len(study.rater_ids),
        missing_cells=tuple(missing),
        metadata=dict(study.metadata),
    )


def _disclosure_lines(result: EvaluationResult) -> list[str]:
    if not result.missing_cells:
        return []
    cells = ";".join(f"{rater}:{item}" for rater, item in result.missing_cells)
    return [f"# incomplete: {len(result.missing_cells)} unscored cells", f"# missing={cells}"]


def summary_csv(result: EvaluationResult) -> str:
    """Long-format model x metric means: one row per (model_label, metric)."""
    buffer = io.StringIO()
    for line in _disclosure_lines(result):
        buffer.write(line + "\n")
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["model_label", "metric", "mean", "n_reports", "n_raters"])
    labels = sorted({label for label, _ in result.means})
    for label in labels:
        for metric in ALL_METRICS:
            if (label, metric) not in result.means:
                continue
            writer.writerow(
                [label, metric.value, repr(result.means[(label, metric)]),
                 result.n_reports, result.n_raters]
            )
    return buffer.getvalue()


def per_report_csv(result: EvaluationResult) -> str:
    """Long-format per-report means: one row per (model, report, metric)."""
    buffer = io.StringIO()
    for line in _disclosure_lines(result):
        buffer.write(line + "\n")
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["model_label", "report_id", "metric", "mean"])
    keys = sorted(result.per_report, key=lambda k: (k[0], k[1], ALL_METRICS.index(k[2])))
    for label, report_id, metric in keys:
        writer.writerow(
            [label, report_id, metric.value, repr(result.per_report[(label, report_id, metric)])]
        )
    return buffer.getvalue()


# --- serialization for the event log ---


def study_to_dict(study: Study) -> dict:
    return {
        "study_id": study.study_id,
        "sources": list(study.sources),
        "n_per_source": study.n_per_source,
        "sampled_report_ids": list(study.sampled_report_ids),
        "model_labels": list(study.model_labels),
        "rater_ids": list(study.rater_ids),
        "sample_seed": study.sample_seed,
        "blinding_map": [
            {"report_id": rid, "model_label": label, "item_id": iid}
            for (rid, label), iid in study.blinding_map.items()
        ],
        "items": [
            {
                "item_id": item.item_id,
                "findings": item.findings,
                "candidate_impression": item.candidate_impression,
                "reference_impression": item.reference_impression,
            }
            for item in study.items.values()
        ],
        "per_rater_item_order": {
            rater: list(order) for rater, order in study.per_rater_item_order.items()
        },
        "status": study.status,
        "metadata": dict(study.metadata),
    }


def study_from_dict(payload: dict) -> Study:
    try:
        return Study(
            study_id=payload["study_id"],
            sources=tuple(payload["sources"]),
            n_per_source=payload["n_per_source"],
            sampled_report_ids=tuple(payload["sampled_report_ids"]),
            model_labels=tuple(payload["model_labels"]),
            rater_ids=tuple(payload["rater_ids"]),
            sample_seed=payload["sample_seed"],
            blinding_map={
                (row["report_id"], row["model_label"]): row["item_id"]
                for row in payload["blinding_map"]
            },
            items={
                row["item_id"]: RatingItem(
                    item_id=row["item_id"],
                    findings=row["findings"],
                    candidate_impression=row["candidate_impression"],
                    reference_impression=row.get("reference_impression"),
                )
                for row in payload["items"]
            },
            per_rater_item_order={
                rater: tuple(order)
                for rater, order in payload["per_rater_item_order"].items()
            },
            status=payload["status"],
            metadata=dict(payload.get("metadata", {})),
        )
    except (KeyError, TypeError) as exc:
        raise DataError(f"malformed study snapshot: {exc}") from exc


def score_to_dict(score: RubricScore) -> dict:
    return {
        "item_id": score.item_id,
        "rater_id": score.rater_id,
        "scores": {metric.value: value for metric, value in score.scores.items()},
        "submitted_at": score.submitted_at,
        "submission_id": score.submission_id,
    }


def score_from_dict(payload: dict) -> RubricScore:
    try:
        return RubricScore(
            item_id=payload["item_id"],
            rater_id=payload["rater_id"],
            scores=payload["scores"],
            submitted_at=payload["submitted_at"],
            submission_id=payload["submission_id"],
        )
    except (KeyError, TypeError) as exc:
        raise DataError(f"malformed score row: {exc}") from exc
