"""Dataset records and their JSONL serialization."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable

from .errors import InputError
from .geometry import BBox, ImageDims
from .jsonl import read_jsonl, write_jsonl

SOURCES = ("AriaUI-Desktop", "AriaUI-Mobile", "AriaUI-Web", "ShowUI-Desktop", "other")
PLATFORMS = ("mobile", "desktop", "web")
ELEM_TYPES = ("text", "icon")

ARIA_SOURCES = ("AriaUI-Desktop", "AriaUI-Mobile", "AriaUI-Web")


@dataclass(frozen=True)
class GroundingRecord:
    """One grounding annotation: an instruction pointing at a box in a screenshot.

    The box lives in the record's original image space and must fit inside it.
    image_ref is a path (or opaque key) to the screenshot; several records may
    share one image.
    """

    id: str
    image_ref: str
    dims: ImageDims
    instruction: str
    gt_box: BBox
    source: str
    platform: str
    elem_type: str | None = None

    def __post_init__(self) -> None:
        if not self.id:
            raise InputError("record id must be non-empty")
        if not self.instruction:
            raise InputError(f"record {self.id}: instruction must be non-empty")
        if self.source not in SOURCES:
            raise InputError(f"record {self.id}: unknown source {self.source!r}")
        if self.platform not in PLATFORMS:
            raise InputError(f"record {self.id}: unknown platform {self.platform!r}")
        if self.elem_type is not None and self.elem_type not in ELEM_TYPES:
            raise InputError(f"record {self.id}: unknown elem_type {self.elem_type!r}")
        box = self.gt_box
        if box.x2 > self.dims.width or box.y2 > self.dims.height:
            raise InputError(
                f"record {self.id}: box {box.as_list()} exceeds image "
                f"{self.dims.width}x{self.dims.height}"
            )

    def to_row(self) -> dict[str, Any]:
        row: dict[str, Any] = {
            "id": self.id,
            "image": self.image_ref,
            "width": self.dims.width,
            "height": self.dims.height,
            "instruction": self.instruction,
            "bbox": self.gt_box.as_list(),
            "source": self.source,
            "platform": self.platform,
        }
        if self.elem_type is not None:
            row["elem_type"] = self.elem_type
        return row

    @classmethod
    def from_row(cls, row: dict[str, Any]) -> "GroundingRecord":
        try:
            bbox = row["bbox"]
            if not (isinstance(bbox, (list, tuple)) and len(bbox) == 4):
                raise InputError(f"record {row.get('id')!r}: bbox must be a 4-list")
            return cls(
                id=str(row["id"]),
                image_ref=str(row["image"]),
                dims=ImageDims(int(row["width"]), int(row["height"])),
                instruction=str(row["instruction"]),
                gt_box=BBox(*(float(v) for v in bbox)),
                source=str(row["source"]),
                platform=str(row["platform"]),
                elem_type=row.get("elem_type"),
            )
        except KeyError as exc:
            raise InputError(f"record {row.get('id')!r}: missing field {exc}") from exc


def load_records(path: str | Path) -> list[GroundingRecord]:
    """Read a record file, enforcing id uniqueness."""
    records = []
    seen: set[str] = set()
    for row in read_jsonl(path):
        rec = GroundingRecord.from_row(row)
        if rec.id in seen:
            raise InputError(f"{path}: duplicate record id {rec.id!r}")
        seen.add(rec.id)
        records.append(rec)
    return records


def write_records(path: str | Path, records: Iterable[GroundingRecord]) -> int:
    return write_jsonl(path, (rec.to_row() for rec in records))


def group_by_image(records: Iterable[GroundingRecord]) -> dict[str, list[GroundingRecord]]:
    """Group records by shared image, each group sorted by id, groups sorted
    by image_ref."""
    groups: dict[str, list[GroundingRecord]] = {}
    for rec in records:
        groups.setdefault(rec.image_ref, []).append(rec)
    return {
        key: sorted(groups[key], key=lambda r: r.id) for key in sorted(groups)
    }
