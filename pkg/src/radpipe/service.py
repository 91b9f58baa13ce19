"""HTTP surface for blind evaluation studies.

Administrators create studies and pull results with a shared admin key;
raters interact through per-rater bearer tokens. Responses sent to raters
carry opaque item ids only, never model labels or report ids, so the
blinding holds even against a curious rater with devtools open.
"""

from __future__ import annotations

import hmac
import logging
import os
from datetime import datetime, timezone
from pathlib import Path

from fastapi import Depends, FastAPI, Header, HTTPException, Query, Response
from pydantic import BaseModel, Field

from radpipe.errors import AlreadyRated, AuthError, DataError, IncompleteStudy
from radpipe.preprocess import ReportPair
from radpipe.store import StudyRepository
from radpipe.study import RubricScore, per_report_csv, summary_csv

logger = logging.getLogger(__name__)

ADMIN_HEADER = "x-admin-key"
TOKEN_HEADER = "x-rater-token"


class PairBody(BaseModel):
    report_id: str
    findings: str
    impression: str


class GenerationBody(BaseModel):
    report_id: str
    model_label: str
    text: str


class CreateStudyBody(BaseModel):
    pairs_by_source: dict[str, list[PairBody]]
    generations: list[GenerationBody]
    model_labels: list[str]
    rater_ids: list[str]
    seed: int = 0
    n_per_source: int = 10
    include_reference: bool = False


class RatingBody(BaseModel):
    item_id: str
    submission_id: str
    scores: dict[str, int] = Field(
        description="metric name -> integer score, all five metrics required"
    )


def create_app(data_dir: str | Path, admin_key: str) -> FastAPI:
    """Build the service over an event log stored under ``data_dir``."""
    if not admin_key:
        raise DataError("admin key must be non-empty")
    data_dir = Path(data_dir)
    data_dir.mkdir(parents=True, exist_ok=True)
    repository = StudyRepository(data_dir / "events.log")

    app = FastAPI(title="radpipe evaluation service", docs_url=None, redoc_url=None)
    app.state.repository = repository

    def require_admin(x_admin_key: str = Header(default="")) -> None:
        if not hmac.compare_digest(x_admin_key.encode(), admin_key.encode()):
            raise HTTPException(status_code=401, detail="admin credential required")

    def require_rater(
        study_id: str, x_rater_token: str = Header(default="")
    ) -> tuple[str, str]:
        try:
            token_study, rater_id = repository.resolve_token(x_rater_token)
        except AuthError as exc:
            raise HTTPException(status_code=401, detail=str(exc)) from exc
        if token_study != study_id:
            raise HTTPException(status_code=403, detail="token is for a different study")
        return study_id, rater_id

    @app.post("/studies", status_code=201)
    def create_study(body: CreateStudyBody, _admin: None = Depends(require_admin)) -> dict:
        pairs_by_source = {
            source: [ReportPair(p.report_id, source, p.findings, p.impression) for p in pairs]
            for source, pairs in body.pairs_by_source.items()
        }
        generations = {(g.report_id, g.model_label): g.text for g in body.generations}
        try:
            study = repository.create_study(
                pairs_by_source,
                generations,
                body.model_labels,
                body.rater_ids,
                body.seed,
                body.n_per_source,
                include_reference=body.include_reference,
            )
            tokens = {}
            expires_at = ""
            for rater_id in study.rater_ids:
                tokens[rater_id], expires_at = repository.issue_token(
                    study.study_id, rater_id
                )
        except DataError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        logger.info("created study %s with %d items", study.study_id, len(study.items))
        return {
            "study_id": study.study_id,
            "item_count": len(study.items),
            "rater_tokens": tokens,
            "tokens_expire_at": expires_at,
        }

    @app.get("/studies/{study_id}/next")
    def next_item(
        study_id: str, auth: tuple[str, str] = Depends(require_rater)
    ) -> dict:
        _study_id, rater_id = auth
        try:
            item = repository.next_item(study_id, rater_id)
            scored, total = repository.progress(study_id, rater_id)
        except DataError as exc:
            raise HTTPException(status_code=404, detail="study not available") from exc
        if item is None:
            return {"done": True, "scored": scored, "total": total}
        payload = {
            "item_id": item.item_id,
            "findings": item.findings,
            "candidate_impression": item.candidate_impression,
        }
        if item.reference_impression is not None:
            payload["reference_impression"] = item.reference_impression
        return {"done": False, "scored": scored, "total": total, "item": payload}

    @app.post("/studies/{study_id}/ratings")
    def submit_rating(
        study_id: str, body: RatingBody, auth: tuple[str, str] = Depends(require_rater)
    ) -> dict:
        _study_id, rater_id = auth
        try:
            score = RubricScore(
                item_id=body.item_id,
                rater_id=rater_id,
                scores=body.scores,
                submitted_at=datetime.now(timezone.utc).isoformat(timespec="seconds"),
                submission_id=body.submission_id,
            )
            status = repository.submit_rating(study_id, score)
        except AlreadyRated as exc:
            raise HTTPException(status_code=409, detail=str(exc)) from exc
        except DataError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        return {"status": status}

    @app.get("/studies/{study_id}/results")
    def results(
        study_id: str,
        kind: str = Query(default="summary"),
        force: bool = Query(default=False),
        _admin: None = Depends(require_admin),
    ) -> Response:
        if kind not in ("summary", "per_report"):
            raise HTTPException(status_code=422, detail="kind must be summary or per_report")
        try:
            result = repository.aggregate(study_id, force=force)
        except IncompleteStudy as exc:
            raise HTTPException(
                status_code=409,
                detail={
                    "error": "study incomplete",
                    "missing_cells": [
                        {"rater_id": rater, "item_id": item}
                        for rater, item in exc.missing_cells
                    ],
                },
            ) from exc
        except DataError as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from exc
        csv_text = summary_csv(result) if kind == "summary" else per_report_csv(result)
        return Response(content=csv_text, media_type="text/csv")

    return app


def main() -> None:
    """Entry point: ``python -m radpipe.service`` with env-based settings."""
    import uvicorn

    admin_key = os.environ.get("RADPIPE_ADMIN_KEY", "")
    if not admin_key:
        raise SystemExit("set RADPIPE_ADMIN_KEY before starting the service")
    data_dir = os.environ.get("RADPIPE_DATA_DIR", "radpipe-data")
    host = os.environ.get("RADPIPE_BIND", "127.0.0.1")
    port = int(os.environ.get("RADPIPE_PORT", "8080"))
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(message)s")
    uvicorn.run(create_app(data_dir, admin_key), host=host, port=port)


if __name__ == "__main__":
    main()
