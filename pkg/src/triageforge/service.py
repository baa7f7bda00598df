"""HTTP API over persisted encounters, reviews, and reports.

Read-mostly: only POST /reviews mutates state, appending one JSON file
per (encounter, reviewer). Reviewer identity is a trusted payload field.
"""

from __future__ import annotations

import datetime
import json
import threading
from pathlib import Path

from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import JSONResponse

from .errors import AggregationError
from .evaluation import (
    ReviewResponse,
    aggregate,
    builtin_rubric,
    validate_review,
)


class DataRepository:
    """File-backed storage under one data directory."""

    def __init__(self, data_dir):
        self.data_dir = Path(data_dir)
        self.transcripts_dir = self.data_dir / "transcripts"
        self.vignettes_dir = self.data_dir / "vignettes"
        self.reviews_dir = self.data_dir / "reviews"
        self.reviews_dir.mkdir(parents=True, exist_ok=True)
        self._write_lock = threading.Lock()

    def list_transcripts(self) -> list[dict]:
        out = []
        if not self.transcripts_dir.is_dir():
            return out
        for path in sorted(self.transcripts_dir.glob("*.json")):
            if path.name == "batch_manifest.json":
                continue
            with open(path, encoding="utf-8") as fh:
                out.append(json.load(fh))
        return out

    def get_transcript(self, encounter_id: str) -> dict | None:
        path = self.transcripts_dir / f"{encounter_id}.json"
        if not path.is_file():
            return None
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)

    def get_vignette(self, vignette_id: str) -> dict | None:
        path = self.vignettes_dir / f"{vignette_id}.json"
        if not path.is_file():
            return None
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)

    def list_reviews(self, encounter_id: str | None = None) -> list[dict]:
        out = []
        for path in sorted(self.reviews_dir.glob("*.json")):
            with open(path, encoding="utf-8") as fh:
                review = json.load(fh)
            if encounter_id is None or review["encounter_id"] == encounter_id:
                out.append(review)
        return out

    def review_path(self, encounter_id: str, reviewer_id: str) -> Path:
        safe_reviewer = reviewer_id.replace("/", "_")
        return self.reviews_dir / f"{encounter_id}__{safe_reviewer}.json"

    def save_review(self, review: ReviewResponse) -> bool:
        """Append-only; returns False when the review already exists."""
        path = self.review_path(review.encounter_id, review.reviewer_id)
        with self._write_lock:
            if path.exists():
                return False
            path.write_text(
                json.dumps(review.to_dict(), indent=2, sort_keys=True) + "\n",
                encoding="utf-8")
        return True


def create_app(data_dir) -> FastAPI:
    repo = DataRepository(data_dir)
    app = FastAPI(title="triageforge review service")
    rubric = builtin_rubric()

    @app.get("/rubric")
    def get_rubric():
        return [q.to_dict() for q in rubric]

    @app.get("/encounters")
    def list_encounters():
        summaries = []
        for transcript in repo.list_transcripts():
            eid = transcript["encounter_id"]
            summaries.append({
                "encounter_id": eid,
                "vignette_id": transcript["vignette_id"],
                "termination": transcript["termination"],
                "final_urgency": transcript.get("final_urgency"),
                "n_turns": len(transcript.get("turns", [])),
                "n_reviews": len(repo.list_reviews(eid)),
            })
        return summaries

    @app.get("/encounters/{encounter_id}/bundle")
    def get_bundle(encounter_id: str):
        transcript = repo.get_transcript(encounter_id)
        if transcript is None:
            raise HTTPException(status_code=404,
                                detail=f"unknown encounter {encounter_id}")
        vignette = repo.get_vignette(transcript["vignette_id"])
        return {
            "encounter_id": encounter_id,
            "vignette": vignette,
            "prior_encounter_note": (vignette or {}).get("prior_encounter_note"),
            "transcript": transcript,
            "assessment": transcript.get("assessment"),
            "verifier_outcome": transcript.get("verifier_outcome"),
        }

    @app.post("/reviews")
    async def post_review(request: Request):
        try:
            payload = await request.json()
            review = ReviewResponse.from_dict(payload)
        except (ValueError, KeyError, TypeError) as exc:
            raise HTTPException(status_code=400,
                                detail=f"malformed review payload: {exc}")
        if repo.get_transcript(review.encounter_id) is None:
            raise HTTPException(
                status_code=404,
                detail=f"unknown encounter {review.encounter_id}")
        violations = validate_review(review, rubric)
        if violations:
            return JSONResponse(
                status_code=422,
                content={"violations": [v.to_dict() for v in violations]})
        if not review.submitted_at:
            review.submitted_at = datetime.datetime.now(
                datetime.timezone.utc).isoformat()
        if not repo.save_review(review):
            raise HTTPException(
                status_code=409,
                detail="review already submitted for this encounter/reviewer; "
                       "overwriting is not allowed")
        return {"status": "accepted", "encounter_id": review.encounter_id,
                "reviewer_id": review.reviewer_id}

    @app.get("/reviews")
    def get_reviews(encounter_id: str | None = None):
        return repo.list_reviews(encounter_id)

    def _build_report():
        reviews = [ReviewResponse.from_dict(r) for r in repo.list_reviews()]
        transcripts = {t["encounter_id"]: t for t in repo.list_transcripts()}
        try:
            return aggregate(reviews, transcripts)
        except AggregationError as exc:
            raise HTTPException(status_code=409, detail=str(exc))

    @app.get("/reports/aggregate")
    def report_aggregate():
        report = _build_report()
        return {"report": report.to_dict(), "table": report.to_table()}

    @app.get("/reports/agreement")
    def report_agreement():
        report = _build_report()
        return {
            "n_encounters": report.n_encounters,
            "urgency_kappa": report.urgency_kappa,
            "urgency_label_source": report.urgency_label_source,
        }

    return app
