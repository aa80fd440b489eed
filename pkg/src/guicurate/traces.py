"""Explanation-trace generation: overlay requests and response validation.

For each record the screenshot gets the ground-truth box drawn as a red
outline and is sent with a fixed guidance prompt; the reply must be a JSON
object {"response": ...} holding a short explanation. Replies are validated
(non-empty, at most two sentences, no mention of the highlight) and
violations are recorded, leaving the drop/keep decision to the caller.
"""

from __future__ import annotations

import io
import json
import re
from dataclasses import dataclass
from importlib import resources as importlib_resources
from typing import Sequence

from PIL import Image, ImageDraw

from .errors import InputError, TraceParseError
from .records import GroundingRecord

INSTRUCTION_SLOT = "<instruction>"

DEFAULT_FORBIDDEN_PHRASES = (
    "red bounding box",
    "red box",
    "highlighted",
    "ground truth",
)

VIOLATION_KINDS = ("empty", "too-many-sentences", "mentions-highlight")

_SENTENCE_SPLIT_RE = re.compile(r"[.!?]+")
_JSON_OBJECT_RE = re.compile(r"\{.*\}", re.DOTALL)


def load_prompt_template() -> str:
    template = (
        importlib_resources.files("guicurate.resources")
        .joinpath("trace_prompt.txt")
        .read_text(encoding="utf-8")
    )
    if template.count(INSTRUCTION_SLOT) != 1:
        raise InputError("prompt template must contain the instruction slot once")
    return template


def build_prompt(instruction: str) -> str:
    if not instruction:
        raise InputError("instruction must be non-empty")
    return load_prompt_template().replace(INSTRUCTION_SLOT, instruction)


@dataclass(frozen=True)
class OverlayStyle:
    color: tuple[int, int, int] = (255, 0, 0)
    line_width: int = 4

    def __post_init__(self) -> None:
        if self.line_width < 1:
            raise InputError(f"line_width must be >= 1, got {self.line_width}")


@dataclass(frozen=True)
class TraceRequest:
    record_id: str
    prompt: str
    image_png: bytes


def build_trace_request(record: GroundingRecord,
                        style: OverlayStyle | None = None) -> TraceRequest:
    """Prompt plus screenshot with the ground-truth box outlined.

    The source image is never modified; drawing happens on an in-memory
    copy. The file must decode and match the record's declared dims."""
    style = style or OverlayStyle()
    try:
        with Image.open(record.image_ref) as img:
            img = img.convert("RGB")
    except OSError as exc:
        raise InputError(f"record {record.id}: cannot read image: {exc}") from exc
    if img.size != (record.dims.width, record.dims.height):
        raise InputError(
            f"record {record.id}: image is {img.size[0]}x{img.size[1]} but the "
            f"record declares {record.dims.width}x{record.dims.height}"
        )
    draw = ImageDraw.Draw(img)
    box = record.gt_box
    draw.rectangle(
        [box.x1, box.y1, box.x2, box.y2],
        outline=style.color, width=style.line_width,
    )
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return TraceRequest(
        record_id=record.id,
        prompt=build_prompt(record.instruction),
        image_png=buf.getvalue(),
    )


def count_sentences(text: str) -> int:
    """Sentence count by terminator runs; trailing text without a terminator
    counts as one sentence."""
    segments = [seg for seg in _SENTENCE_SPLIT_RE.split(text) if seg.strip()]
    return len(segments)


@dataclass(frozen=True)
class TraceResult:
    record_id: str
    trace: str
    violations: tuple[str, ...]

    @property
    def clean(self) -> bool:
        return not self.violations


def parse_trace_response(raw: str) -> str:
    """Extract the explanation string from a completion.

    Accepts the bare JSON object or one embedded in surrounding chatter.
    Anything without a parsable object carrying a string 'response' field
    raises TraceParseError with the raw text attached."""
    candidates = []
    stripped = (raw or "").strip()
    if stripped:
        candidates.append(stripped)
        embedded = _JSON_OBJECT_RE.search(stripped)
        if embedded and embedded.group(0) != stripped:
            candidates.append(embedded.group(0))
    for candidate in candidates:
        try:
            obj = json.loads(candidate)
        except json.JSONDecodeError:
            continue
        if isinstance(obj, dict) and isinstance(obj.get("response"), str):
            return obj["response"]
    raise TraceParseError(f"no JSON response object in completion: {raw!r:.200}",
                          raw=raw or "")


def validate_trace(record_id: str, trace: str,
                   forbidden_phrases: Sequence[str] = DEFAULT_FORBIDDEN_PHRASES
                   ) -> TraceResult:
    """Check a trace against the explanation criteria.

    Violations come back in a fixed canonical order regardless of the
    forbidden-phrase ordering, so validation output is deterministic."""
    violations: list[str] = []
    if not trace.strip():
        violations.append("empty")
    elif count_sentences(trace) > 2:
        violations.append("too-many-sentences")
    lowered = trace.lower()
    if any(phrase.lower() in lowered for phrase in forbidden_phrases):
        violations.append("mentions-highlight")
    return TraceResult(record_id=record_id, trace=trace,
                       violations=tuple(violations))
