"""Training and evaluation data for a binary grounding ranker.

Training pairs come from annotations the zero-shot model already grounds
reliably: a group (all annotations on one image) qualifies when the model got
at least M of them right, with M set per source. Each qualifying annotation
keeps its own box as a positive with probability one half, otherwise its box
is swapped with a different annotation's box from the same image to form a
negative. Singleton groups stay positive by default since there is nothing to
swap. Benchmark groups expand exhaustively instead: every annotation is a
positive, and every (instruction, other box) pairing on the same image is a
negative, so a group of n yields n positives and n*(n-1) negatives.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

from .errors import InputError
from .geometry import BBox, ImageDims
from .records import ARIA_SOURCES, GroundingRecord, group_by_image

ORIGINS = ("kept-original", "swapped", "benchmark-pos", "benchmark-neg")


@dataclass(frozen=True)
class RankerTriplet:
    """One (image, text, box) example with a binary label."""

    id: str
    image_ref: str
    dims: ImageDims
    text: str
    box: BBox
    label: str
    origin: str

    def __post_init__(self) -> None:
        if self.label not in ("positive", "negative"):
            raise InputError(f"triplet {self.id}: bad label {self.label!r}")
        if self.origin not in ORIGINS:
            raise InputError(f"triplet {self.id}: bad origin {self.origin!r}")

    def to_row(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "image": self.image_ref,
            "text": self.text,
            "bbox": self.box.as_list(),
            "label": self.label,
            "origin": self.origin,
        }


@dataclass(frozen=True)
class EligibilityRule:
    """Per-source minimum number of correctly grounded annotations a group
    needs before any of its members become training examples."""

    thresholds: Mapping[str, int] = field(default_factory=dict)
    default: int = 1

    def __post_init__(self) -> None:
        for source, value in self.thresholds.items():
            if value < 1:
                raise InputError(f"threshold for {source!r} must be >= 1, got {value}")
        if self.default < 1:
            raise InputError(f"default threshold must be >= 1, got {self.default}")

    @classmethod
    def standard(cls) -> "EligibilityRule":
        return cls(thresholds={source: 5 for source in ARIA_SOURCES} |
                   {"ShowUI-Desktop": 1})

    def threshold_for(self, source: str) -> int:
        return self.thresholds.get(source, self.default)


def _unit(seed: int, *parts: Any) -> float:
    text = "\x1f".join(str(p) for p in (seed, *parts))
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") / 2.0**64


def _index(seed: int, modulus: int, *parts: Any) -> int:
    text = "\x1f".join(str(p) for p in (seed, *parts))
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[8:16], "big") % modulus


def _check_group(image_ref: str, group: Sequence[GroundingRecord]) -> None:
    dims = {rec.dims for rec in group}
    if len(dims) > 1:
        raise InputError(f"group {image_ref!r}: conflicting image dims {dims}")
    sources = {rec.source for rec in group}
    if len(sources) > 1:
        raise InputError(f"group {image_ref!r}: mixed sources {sorted(sources)}")


def build_training_triplets(easy_records: Sequence[GroundingRecord],
                            outcomes: Mapping[str, str],
                            rule: EligibilityRule | None = None,
                            *, seed: int = 0,
                            positive_probability: float = 0.5) -> list[RankerTriplet]:
    """Turn reliably grounded annotations into labeled ranker examples.

    outcomes maps record id to its difficulty label and must mark every input
    record 'easy'; the input is therefore the correctly grounded partition,
    and a group's correct count is simply its size here. Output is ordered by
    (image_ref, id). Swap partners are drawn uniformly among same-group
    annotations whose box differs, so a negative never carries a box equal to
    the original; if every other box is identical the annotation stays
    positive.
    """
    if not 0.0 <= positive_probability <= 1.0:
        raise InputError(
            f"positive_probability must be in [0, 1], got {positive_probability}"
        )
    rule = rule or EligibilityRule.standard()
    bad = [rec.id for rec in easy_records if outcomes.get(rec.id) != "easy"]
    if bad:
        raise InputError(
            f"records without an 'easy' outcome passed as easy: {bad[:5]!r}"
        )
    triplets: list[RankerTriplet] = []
    for image_ref, group in group_by_image(easy_records).items():
        _check_group(image_ref, group)
        threshold = rule.threshold_for(group[0].source)
        # Input is the easy partition, so group size == correct count.
        if len(group) < threshold:
            continue
        if len(group) == 1:
            rec = group[0]
            triplets.append(RankerTriplet(
                id=rec.id, image_ref=image_ref, dims=rec.dims,
                text=rec.instruction, box=rec.gt_box,
                label="positive", origin="kept-original",
            ))
            continue
        for rec in group:
            keep = _unit(seed, "label", image_ref, rec.id) < positive_probability
            partner: GroundingRecord | None = None
            if not keep:
                candidates = [
                    other for other in group
                    if other.id != rec.id and other.gt_box != rec.gt_box
                ]
                if candidates:
                    partner = candidates[
                        _index(seed, len(candidates), "swap", image_ref, rec.id)
                    ]
            if partner is None:
                triplets.append(RankerTriplet(
                    id=rec.id, image_ref=image_ref, dims=rec.dims,
                    text=rec.instruction, box=rec.gt_box,
                    label="positive", origin="kept-original",
                ))
            else:
                triplets.append(RankerTriplet(
                    id=rec.id, image_ref=image_ref, dims=rec.dims,
                    text=rec.instruction, box=partner.gt_box,
                    label="negative", origin="swapped",
                ))
    return triplets


def expand_benchmark_binary(
    groups: Mapping[str, Sequence[GroundingRecord]]
) -> tuple[list[RankerTriplet], int]:
    """Exhaustive binary expansion of benchmark annotations.

    Per image group of size n: n positives plus n*(n-1) negatives pairing
    each instruction with every other box. Duplicate (instruction, box)
    annotations are dropped first (keeping the lowest id) and counted in the
    returned flag total. Output is ordered by image, then positives before
    the negatives of each annotation."""
    triplets: list[RankerTriplet] = []
    duplicates = 0
    for image_ref in sorted(groups):
        group = sorted(groups[image_ref], key=lambda r: r.id)
        _check_group(image_ref, group)
        seen: set[tuple[str, tuple[float, ...]]] = set()
        unique: list[GroundingRecord] = []
        for rec in group:
            key = (rec.instruction, tuple(rec.gt_box.as_list()))
            if key in seen:
                duplicates += 1
                continue
            seen.add(key)
            unique.append(rec)
        for rec in unique:
            triplets.append(RankerTriplet(
                id=rec.id, image_ref=image_ref, dims=rec.dims,
                text=rec.instruction, box=rec.gt_box,
                label="positive", origin="benchmark-pos",
            ))
            for other in unique:
                if other.id == rec.id:
                    continue
                triplets.append(RankerTriplet(
                    id=f"{rec.id}__not__{other.id}", image_ref=image_ref,
                    dims=rec.dims, text=rec.instruction, box=other.gt_box,
                    label="negative", origin="benchmark-neg",
                ))
    return triplets, duplicates


def label_counts(triplets: Iterable[RankerTriplet]) -> tuple[int, int]:
    """(positive count, negative count)."""
    pos = neg = 0
    for triplet in triplets:
        if triplet.label == "positive":
            pos += 1
        else:
            neg += 1
    return pos, neg


def negative_fraction(triplets: Sequence[RankerTriplet]) -> float:
    pos, neg = label_counts(triplets)
    if pos + neg == 0:
        raise InputError("no triplets")
    return neg / (pos + neg)
