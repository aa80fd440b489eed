"""Coordinate types plus the hit-test, rescale, and patch-resize arithmetic.

Boxes are absolute pixel coordinates (x1, y1, x2, y2) with the origin at the
top-left, x1 < x2 and y1 < y2. Dataset records keep boxes in original-image
space; model predictions arrive in the model's resized space and are mapped
back on ingestion so downstream code never mixes coordinate frames.
"""

from __future__ import annotations

import math
import re
import warnings
from dataclasses import dataclass

from .errors import InputError

_NUMBER = r"[-+]?\d+(?:\.\d+)?"
# Exactly four comma-separated numbers inside one bracket pair.
FOUR_TUPLE_RE = re.compile(
    r"\[\s*({n})\s*,\s*({n})\s*,\s*({n})\s*,\s*({n})\s*\]".format(n=_NUMBER)
)
ANSWER_SPAN_RE = re.compile(r"<answer>(.*?)</answer>", re.DOTALL)


@dataclass(frozen=True)
class Point:
    x: float
    y: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise InputError(f"point coordinates must be finite, got ({self.x}, {self.y})")


@dataclass(frozen=True)
class BBox:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self) -> None:
        coords = (self.x1, self.y1, self.x2, self.y2)
        if not all(math.isfinite(c) for c in coords):
            raise InputError(f"bbox coordinates must be finite, got {coords}")
        if min(coords) < 0:
            raise InputError(f"bbox coordinates must be non-negative, got {coords}")
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise InputError(f"bbox needs x1 < x2 and y1 < y2, got {coords}")

    @property
    def center(self) -> Point:
        return Point((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)

    def as_list(self) -> list[float]:
        return [self.x1, self.y1, self.x2, self.y2]


@dataclass(frozen=True)
class ImageDims:
    width: int
    height: int

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise InputError(f"image dims must be >= 1, got {self.width}x{self.height}")

    @property
    def area(self) -> int:
        return self.width * self.height


def point_in_box(point: Point, box: BBox) -> bool:
    """Boundary-inclusive containment test."""
    return box.x1 <= point.x <= box.x2 and box.y1 <= point.y <= box.y2


def center_hit(pred: BBox, gt: BBox) -> bool:
    """True when the predicted box's center falls inside the ground-truth box.

    Both boxes must be in the same coordinate space; boundary counts as a hit.
    """
    return point_in_box(pred.center, gt)


def bbox_from_numbers(x1: float, y1: float, x2: float, y2: float) -> BBox | None:
    """Build a box from raw numbers, swapping flipped corners. Returns None
    for non-finite, negative, or degenerate (zero width/height) input."""
    if x1 > x2:
        x1, x2 = x2, x1
    if y1 > y2:
        y1, y2 = y2, y1
    if not all(math.isfinite(v) for v in (x1, y1, x2, y2)):
        return None
    if min(x1, y1, x2, y2) < 0:
        return None
    if not (x1 < x2 and y1 < y2):
        return None
    return BBox(x1, y1, x2, y2)


def parse_bbox(text: str) -> BBox | None:
    """Extract the first bracketed numeric 4-tuple from model output.

    A tuple inside an <answer> span wins over one elsewhere; with no span (or
    no tuple in any span) the first tuple anywhere in the text is used.
    Flipped corners are swapped into canonical order; anything invalid after
    normalization means no box.
    """
    if not text:
        return None
    match = None
    for span in ANSWER_SPAN_RE.finditer(text):
        match = FOUR_TUPLE_RE.search(span.group(1))
        if match:
            break
    if match is None:
        match = FOUR_TUPLE_RE.search(text)
    if match is None:
        return None
    return bbox_from_numbers(*(float(g) for g in match.groups()))


def rescale_bbox(box: BBox, from_dims: ImageDims, to_dims: ImageDims) -> BBox:
    """Map a box between image spaces by independent x/y scaling."""
    sx = to_dims.width / from_dims.width
    sy = to_dims.height / from_dims.height
    return BBox(box.x1 * sx, box.y1 * sy, box.x2 * sx, box.y2 * sy)


def clamp_bbox(box: BBox, dims: ImageDims) -> BBox | None:
    """Clip a box to image bounds; None when nothing of it remains inside."""
    x1 = min(max(box.x1, 0.0), float(dims.width))
    y1 = min(max(box.y1, 0.0), float(dims.height))
    x2 = min(max(box.x2, 0.0), float(dims.width))
    y2 = min(max(box.y2, 0.0), float(dims.height))
    if not (x1 < x2 and y1 < y2):
        return None
    return BBox(x1, y1, x2, y2)


def _nearest_multiple(value: float, patch: int) -> int:
    # floor(x + 0.5) rather than round(): ties go up, never to even.
    return int(math.floor(value / patch + 0.5)) * patch


@dataclass(frozen=True)
class ResizeConfig:
    patch: int = 28
    min_pixels: int = 3136
    max_pixels: int = 846720

    def __post_init__(self) -> None:
        if self.patch < 1:
            raise InputError(f"patch must be >= 1, got {self.patch}")
        if self.min_pixels > self.max_pixels:
            raise InputError(
                f"min_pixels {self.min_pixels} exceeds max_pixels {self.max_pixels}"
            )

    def apply(self, dims: ImageDims) -> ImageDims:
        return smart_resize(dims, patch=self.patch, min_pixels=self.min_pixels,
                            max_pixels=self.max_pixels)


def smart_resize(dims: ImageDims, *, patch: int = 28, min_pixels: int = 3136,
                 max_pixels: int = 846720) -> ImageDims:
    """Snap dims to patch multiples, then scale into the pixel-budget window.

    Each side rounds to its nearest patch multiple. If the rounded area
    exceeds max_pixels both sides shrink by sqrt(area / max_pixels) and floor
    to patch multiples; below min_pixels both sides grow by
    sqrt(min_pixels / area) and ceil. A side that would collapse to zero is
    clamped up to one patch and a warning is issued, since the aspect ratio
    can no longer be preserved.
    """
    if patch < 1:
        raise InputError(f"patch must be >= 1, got {patch}")
    if min_pixels > max_pixels:
        raise InputError(f"min_pixels {min_pixels} exceeds max_pixels {max_pixels}")
    width = _nearest_multiple(dims.width, patch)
    height = _nearest_multiple(dims.height, patch)
    clamped = False
    if width == 0:
        width = patch
        clamped = True
    if height == 0:
        height = patch
        clamped = True
    area = width * height
    if area > max_pixels:
        beta = math.sqrt(area / max_pixels)
        width = int(math.floor(width / beta / patch)) * patch
        height = int(math.floor(height / beta / patch)) * patch
        if width == 0:
            width = patch
            clamped = True
        if height == 0:
            height = patch
            clamped = True
    elif area < min_pixels:
        gamma = math.sqrt(min_pixels / area)
        width = int(math.ceil(width * gamma / patch)) * patch
        height = int(math.ceil(height * gamma / patch)) * patch
    if clamped:
        warnings.warn(
            f"resize of {dims.width}x{dims.height} clamped a side to one patch; "
            "aspect ratio not preserved",
            stacklevel=2,
        )
    return ImageDims(width, height)
