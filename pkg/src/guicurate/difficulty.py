"""Difficulty partition: split records by whether the zero-shot model already
grounds them.

A record is easy when the model's predicted box, mapped back to original
image space, has its center inside the ground-truth box; unparseable output
or a miss makes it hard. Predictions are cached on disk keyed by (model,
record id) so a warm re-run issues no requests.
"""

from __future__ import annotations

import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Sequence

from .client import GroundResult, VLMClient
from .errors import InputError, RequestError
from .geometry import BBox, ImageDims, center_hit
from .jsonl import read_jsonl, write_jsonl
from .records import GroundingRecord


@dataclass(frozen=True)
class DifficultyOutcome:
    record_id: str
    prediction: GroundResult
    label: str  # "easy" | "hard"

    def to_row(self) -> dict[str, Any]:
        box = self.prediction.parsed_box
        return {
            "id": self.record_id,
            "label": self.label,
            "raw_output": self.prediction.raw_output,
            "pred_bbox": box.as_list() if box is not None else None,
            "model_width": self.prediction.model_dims.width,
            "model_height": self.prediction.model_dims.height,
        }


@dataclass
class DifficultyPartition:
    easy: list[GroundingRecord]
    hard: list[GroundingRecord]
    outcomes: list[DifficultyOutcome]
    deferred: list[tuple[str, str]]  # (record id, error text)

    def outcome_labels(self) -> dict[str, str]:
        return {outcome.record_id: outcome.label for outcome in self.outcomes}


class PredictionCache:
    """Disk-backed grounding predictions keyed by (model id, record id)."""

    def __init__(self, path: str | Path, model: str) -> None:
        self.path = Path(path)
        self.model = model
        self._rows: dict[str, dict[str, Any]] = {}
        # rows for other models share the file and must survive a flush
        self._foreign: list[dict[str, Any]] = []
        self._lock = threading.Lock()
        if self.path.exists():
            for row in read_jsonl(self.path):
                if row.get("model") == model:
                    self._rows[str(row["id"])] = row
                else:
                    self._foreign.append(row)

    def get(self, record_id: str) -> GroundResult | None:
        row = self._rows.get(record_id)
        if row is None:
            return None
        box = row.get("pred_bbox")
        return GroundResult(
            raw_output=str(row["raw_output"]),
            parsed_box=BBox(*box) if box is not None else None,
            model_dims=ImageDims(int(row["model_width"]), int(row["model_height"])),
        )

    def put(self, record_id: str, result: GroundResult) -> None:
        box = result.parsed_box
        row = {
            "model": self.model,
            "id": record_id,
            "raw_output": result.raw_output,
            "pred_bbox": box.as_list() if box is not None else None,
            "model_width": result.model_dims.width,
            "model_height": result.model_dims.height,
        }
        with self._lock:
            self._rows[record_id] = row

    def flush(self) -> None:
        with self._lock:
            own = [self._rows[key] for key in sorted(self._rows)]
            rows = list(self._foreign) + own
        write_jsonl(self.path, rows)


def map_with_client(items: Sequence[GroundingRecord],
                    call: Callable[[GroundingRecord], Any],
                    max_workers: int) -> dict[str, Any]:
    """Run a client call over records, bounded by max_workers. Returns id ->
    result, where a result may be the raised exception."""
    results: dict[str, Any] = {}
    if max_workers <= 1 or len(items) <= 1:
        for rec in items:
            try:
                results[rec.id] = call(rec)
            except Exception as exc:  # noqa: BLE001 - collected per record
                results[rec.id] = exc
        return results
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        futures = {rec.id: pool.submit(call, rec) for rec in items}
        for rec_id, future in futures.items():
            try:
                results[rec_id] = future.result()
            except Exception as exc:  # noqa: BLE001
                results[rec_id] = exc
    return results


def classify(record: GroundingRecord, result: GroundResult) -> str:
    if result.parsed_box is None:
        return "hard"
    return "easy" if center_hit(result.parsed_box, record.gt_box) else "hard"


def partition_by_difficulty(records: Sequence[GroundingRecord], client: VLMClient,
                            cache: PredictionCache | None = None
                            ) -> DifficultyPartition:
    """Label every record easy or hard using the client's grounding calls.

    Records already in the cache are not re-requested. A request that still
    fails after the client's retries defers the record (it lands in neither
    partition and is reported); any other error propagates. Output lists are
    id-ordered and disjoint, and easy + hard + deferred covers the input."""
    ids = [rec.id for rec in records]
    if len(set(ids)) != len(ids):
        raise InputError("duplicate record ids in difficulty input")
    by_id = {rec.id: rec for rec in records}
    pending = [
        rec for rec in records
        if cache is None or cache.get(rec.id) is None
    ]
    fetched = map_with_client(pending, client.ground, client.config.max_inflight)
    deferred: list[tuple[str, str]] = []
    outcomes: list[DifficultyOutcome] = []
    easy: list[GroundingRecord] = []
    hard: list[GroundingRecord] = []
    for rec_id in sorted(by_id):
        record = by_id[rec_id]
        result: GroundResult | None = None
        if cache is not None:
            result = cache.get(rec_id)
        if result is None:
            outcome = fetched[rec_id]
            if isinstance(outcome, RequestError):
                deferred.append((rec_id, str(outcome)))
                continue
            if isinstance(outcome, Exception):
                raise outcome
            result = outcome
            if cache is not None:
                cache.put(rec_id, result)
        label = classify(record, result)
        outcomes.append(DifficultyOutcome(rec_id, result, label))
        (easy if label == "easy" else hard).append(record)
    if cache is not None:
        cache.flush()
    return DifficultyPartition(easy=easy, hard=hard, outcomes=outcomes,
                               deferred=deferred)
