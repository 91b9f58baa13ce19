"""Durable study state: an append-only event log replayed into memory.

The repository owns one event log file. Every state change is appended and
fsynced before the caller gets an acknowledgment, so a crash never loses an
acked rating; reopening the same path rebuilds identical state.
"""

from __future__ import annotations

import logging
import secrets
import threading
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Mapping, Sequence

from radpipe import study as protocol
from radpipe.errors import AuthError, DataError
from radpipe.eventlog import EventLog
from radpipe.preprocess import ReportPair
from radpipe.study import EvaluationResult, RatingItem, RubricScore, Study

logger = logging.getLogger(__name__)

EVENT_STUDY_CREATED = "study_created"
EVENT_TOKEN_ISSUED = "token_issued"
EVENT_ITEM_ISSUED = "item_issued"
EVENT_RATING_SUBMITTED = "rating_submitted"

DEFAULT_TOKEN_TTL_SECONDS = 30 * 24 * 3600


def _now() -> datetime:
    return datetime.now(timezone.utc)


def _iso(moment: datetime) -> str:
    return moment.isoformat(timespec="seconds")


class StudyRepository:
    """All studies persisted in one event log file."""

    def __init__(self, path: str | Path):
        self._log = EventLog(path)
        self._lock = threading.RLock()
        self._studies: dict[str, Study] = {}
        self._scores: dict[str, dict[tuple[str, str], RubricScore]] = {}
        # token -> (study_id, rater_id, expires_at ISO)
        self._tokens: dict[str, tuple[str, str, str]] = {}
        count = 0
        for event in self._log.replay():
            self._apply(event)
            count += 1
        if count:
            logger.info("replayed %d events from %s", count, self._log.path)

    # -- replay --

    def _apply(self, event: dict) -> None:
        kind = event.get("kind")
        if kind == EVENT_STUDY_CREATED:
            study = protocol.study_from_dict(event["study"])
            self._studies[study.study_id] = study
            self._scores.setdefault(study.study_id, {})
        elif kind == EVENT_TOKEN_ISSUED:
            self._tokens[event["token"]] = (
                event["study_id"],
                event["rater_id"],
                event["expires_at"],
            )
        elif kind == EVENT_RATING_SUBMITTED:
            score = protocol.score_from_dict(event["score"])
            self._scores[event["study_id"]][(score.rater_id, score.item_id)] = score
        elif kind == EVENT_ITEM_ISSUED:
            pass  # audit trail only; issuance does not change state
        else:
            raise DataError(f"unknown event kind {kind!r} in {self._log.path}")

    # -- admin operations --

    def create_study(
        self,
        pairs_by_source: Mapping[str, Sequence[ReportPair]],
        generations: Mapping[tuple[str, str], str],
        model_labels: Sequence[str],
        rater_ids: Sequence[str],
        seed: int,
        n_per_source: int = 10,
        *,
        include_reference: bool = False,
    ) -> Study:
        with self._lock:
            study = protocol.create_study(
                pairs_by_source,
                generations,
                model_labels,
                rater_ids,
                seed,
                n_per_source,
                include_reference=include_reference,
            )
            self._log.append(
                {"kind": EVENT_STUDY_CREATED, "study": protocol.study_to_dict(study)}
            )
            self._studies[study.study_id] = study
            self._scores[study.study_id] = {}
            return study

    def get_study(self, study_id: str) -> Study:
        with self._lock:
            study = self._studies.get(study_id)
            if study is None:
                raise DataError(f"no such study: {study_id!r}")
            return study

    def list_studies(self) -> list[str]:
        with self._lock:
            return sorted(self._studies)

    def issue_token(
        self, study_id: str, rater_id: str, ttl_seconds: int = DEFAULT_TOKEN_TTL_SECONDS
    ) -> tuple[str, str]:
        """Mint a rater session token; returns (token, expires_at ISO)."""
        with self._lock:
            study = self.get_study(study_id)
            if rater_id not in study.rater_ids:
                raise DataError(f"rater {rater_id!r} is not part of study {study_id}")
            token = secrets.token_urlsafe(24)
            expires_at = _iso(_now() + timedelta(seconds=ttl_seconds))
            self._log.append(
                {
                    "kind": EVENT_TOKEN_ISSUED,
                    "token": token,
                    "study_id": study_id,
                    "rater_id": rater_id,
                    "expires_at": expires_at,
                }
            )
            self._tokens[token] = (study_id, rater_id, expires_at)
            return token, expires_at

    def resolve_token(self, token: str) -> tuple[str, str]:
        """(study_id, rater_id) for a live token; AuthError otherwise."""
        with self._lock:
            entry = self._tokens.get(token)
        if entry is None:
            raise AuthError("unknown rater token")
        study_id, rater_id, expires_at = entry
        if _iso(_now()) > expires_at:
            raise AuthError("rater token has expired")
        return study_id, rater_id

    # -- rater operations --

    def next_item(self, study_id: str, rater_id: str) -> RatingItem | None:
        with self._lock:
            study = self.get_study(study_id)
            item = protocol.next_item(study, self._scores[study_id], rater_id)
            if item is not None:
                self._log.append(
                    {
                        "kind": EVENT_ITEM_ISSUED,
                        "study_id": study_id,
                        "rater_id": rater_id,
                        "item_id": item.item_id,
                    }
                )
            return item

    def submit_rating(self, study_id: str, score: RubricScore) -> str:
        """Durably record a rating. "accepted" or "duplicate" on success.

        The event hits disk before the in-memory store mutates, so an
        acknowledgment implies the rating survives a crash.
        """
        with self._lock:
            study = self.get_study(study_id)
            scores = self._scores[study_id]
            status = protocol.check_submission(study, scores, score)
            if status == "accepted":
                self._log.append(
                    {
                        "kind": EVENT_RATING_SUBMITTED,
                        "study_id": study_id,
                        "score": protocol.score_to_dict(score),
                    }
                )
                scores[(score.rater_id, score.item_id)] = score
            return status

    def progress(self, study_id: str, rater_id: str) -> tuple[int, int]:
        """(items scored by this rater, total items in the study)."""
        with self._lock:
            study = self.get_study(study_id)
            if rater_id not in study.rater_ids:
                raise DataError(f"unknown rater {rater_id!r}")
            scored = sum(
                1 for (rater, _item) in self._scores[study_id] if rater == rater_id
            )
            return scored, len(study.items)

    # -- results --

    def aggregate(self, study_id: str, *, force: bool = False) -> EvaluationResult:
        with self._lock:
            study = self.get_study(study_id)
            return protocol.aggregate_results(study, self._scores[study_id], force=force)

    def scores_for(self, study_id: str) -> dict[tuple[str, str], RubricScore]:
        with self._lock:
            self.get_study(study_id)
            return dict(self._scores[study_id])

    def close(self) -> None:
        self._log.close()
