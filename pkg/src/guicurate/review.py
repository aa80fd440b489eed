"""Human review service: queue of pending records, decision log, stats.

Decisions are append-only JSONL; the effective verdict for a record is the
one with the latest timestamp (file order breaks exact ties). The HTTP API
serves undecided records in id order with cursor pagination and accepts
accept/reject decisions. An optional shared bearer token guards every
endpoint when configured.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional, Sequence

from fastapi import Depends, FastAPI, HTTPException, Request
from fastapi.responses import FileResponse
from pydantic import BaseModel, Field

from .errors import InputError
from .jsonl import append_jsonl, read_jsonl
from .records import GroundingRecord

VERDICTS = ("accept", "reject")


class DecisionIn(BaseModel):
    id: str
    verdict: str = Field(pattern="^(accept|reject)$")
    note: Optional[str] = None
    reviewer: str = "reviewer"


@dataclass(frozen=True)
class ReviewDecision:
    id: str
    verdict: str
    reviewer: str
    ts: float
    note: str | None = None

    def __post_init__(self) -> None:
        if self.verdict not in VERDICTS:
            raise InputError(f"verdict must be accept/reject, got {self.verdict!r}")

    def to_row(self) -> dict[str, Any]:
        row: dict[str, Any] = {
            "id": self.id,
            "verdict": self.verdict,
            "reviewer": self.reviewer,
            "ts": self.ts,
        }
        if self.note is not None:
            row["note"] = self.note
        return row

    @classmethod
    def from_row(cls, row: dict[str, Any]) -> "ReviewDecision":
        try:
            return cls(
                id=str(row["id"]), verdict=str(row["verdict"]),
                reviewer=str(row.get("reviewer", "unknown")),
                ts=float(row["ts"]), note=row.get("note"),
            )
        except KeyError as exc:
            raise InputError(f"decision row missing field {exc}") from exc


class DecisionLog:
    """Append-only decision store. Appends are serialized by a lock; readers
    always see whole lines since writes are line-buffered appends."""

    def __init__(self, path: str | Path) -> None:
        self.path = Path(path)
        self._lock = threading.Lock()

    def append(self, decision: ReviewDecision) -> None:
        with self._lock:
            append_jsonl(self.path, decision.to_row())

    def load(self) -> list[ReviewDecision]:
        if not self.path.exists():
            return []
        return [ReviewDecision.from_row(row) for row in read_jsonl(self.path)]

    def effective(self) -> dict[str, ReviewDecision]:
        """Latest decision per record id; the newest timestamp wins and file
        order breaks ties, so replaying the log reproduces this mapping."""
        latest: dict[str, ReviewDecision] = {}
        for decision in self.load():
            current = latest.get(decision.id)
            if current is None or decision.ts >= current.ts:
                latest[decision.id] = decision
        return latest


def review_stats(records: Sequence[GroundingRecord],
                 log: DecisionLog) -> dict[str, int]:
    effective = log.effective()
    accepted = rejected = pending = 0
    for rec in records:
        decision = effective.get(rec.id)
        if decision is None:
            pending += 1
        elif decision.verdict == "accept":
            accepted += 1
        else:
            rejected += 1
    return {"pending": pending, "accepted": accepted, "rejected": rejected}


def create_review_app(records: Sequence[GroundingRecord], log: DecisionLog, *,
                      token: str | None = None,
                      static_dir: str | Path | None = None):
    """FastAPI app over a fixed record set and a decision log."""
    ids = [rec.id for rec in records]
    if len(set(ids)) != len(ids):
        raise InputError("duplicate record ids in review set")
    by_id = {rec.id: rec for rec in records}
    ordered_ids = sorted(by_id)

    def check_token(request: Request) -> None:
        if token is None:
            return
        header = request.headers.get("authorization", "")
        if header != f"Bearer {token}":
            raise HTTPException(status_code=401, detail="missing or bad token")

    app = FastAPI(title="review", dependencies=[Depends(check_token)])

    def queue_item(rec: GroundingRecord) -> dict[str, Any]:
        return {
            "id": rec.id,
            "instruction": rec.instruction,
            "image": f"/api/image/{rec.id}",
            "bbox": rec.gt_box.as_list(),
            "width": rec.dims.width,
            "height": rec.dims.height,
        }

    @app.get("/api/queue")
    def queue(cursor: str = "", limit: int = 50) -> dict[str, Any]:
        if limit < 1 or limit > 500:
            raise HTTPException(status_code=422, detail="limit must be in [1, 500]")
        decided = set(log.effective())
        pending = [
            rec_id for rec_id in ordered_ids
            if rec_id not in decided and (not cursor or rec_id > cursor)
        ]
        page = pending[:limit]
        next_cursor = page[-1] if len(pending) > limit else None
        return {
            "items": [queue_item(by_id[rec_id]) for rec_id in page],
            "next_cursor": next_cursor,
            "pending_total": len(pending),
        }

    @app.get("/api/image/{record_id}")
    def image(record_id: str):
        rec = by_id.get(record_id)
        if rec is None:
            raise HTTPException(status_code=404, detail="unknown record id")
        path = Path(rec.image_ref)
        if not path.exists():
            raise HTTPException(status_code=404, detail="image file missing")
        suffix = path.suffix.lower()
        media = {"jpg": "image/jpeg", "jpeg": "image/jpeg"}.get(
            suffix.lstrip("."), "image/png"
        )
        return FileResponse(path, media_type=media)

    @app.post("/api/decision")
    def decide(body: DecisionIn) -> dict[str, Any]:
        if body.id not in by_id:
            raise HTTPException(status_code=404, detail="unknown record id")
        decision = ReviewDecision(
            id=body.id, verdict=body.verdict, reviewer=body.reviewer,
            ts=time.time(), note=body.note,
        )
        log.append(decision)
        return {"ok": True, **review_stats(records, log)}

    @app.get("/api/stats")
    def stats() -> dict[str, int]:
        return review_stats(records, log)

    if static_dir is not None:
        static_path = Path(static_dir)
        index = static_path / "index.html"

        @app.get("/")
        def root():
            if not index.exists():
                raise HTTPException(status_code=404, detail="no frontend build")
            return FileResponse(index, media_type="text/html")

        @app.get("/assets/{name}")
        def asset(name: str):
            target = (static_path / name).resolve()
            if not target.is_file() or static_path.resolve() not in target.parents:
                raise HTTPException(status_code=404, detail="unknown asset")
            media = "text/javascript" if name.endswith(".js") else (
                "text/css" if name.endswith(".css") else "application/octet-stream"
            )
            return FileResponse(target, media_type=media)

    return app
