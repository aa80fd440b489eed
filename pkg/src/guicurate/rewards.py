"""Verifiable reward scoring for grounding rollouts.

Three binary component rewards, each 0 or 1:

* format: the whole output is one think span followed by one answer span,
  nothing before or between or after, the think content is non-empty, and the
  answer content holds exactly one bracketed numeric 4-tuple.
* solution: the answer box's center lies inside the ground-truth box
  (boundary inclusive), both in the same coordinate space.
* length: the token count of the full output is at or under the limit.

The total is the plain sum of the three, never scaled or weighted.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Any, Callable, Iterable, Iterator

from .errors import InputError
from .geometry import (
    ANSWER_SPAN_RE,
    FOUR_TUPLE_RE,
    BBox,
    bbox_from_numbers,
    parse_bbox,
    point_in_box,
)

GRAMMAR_VERSION = "think-answer-v1"
TOKENIZERS = ("whitespace", "bytes-per-token-approx", "external")

# One think span then one answer span, anchored at both ends. Whitespace is
# tolerated only between the spans.
_GRAMMAR_RE = re.compile(
    r"\A<think>(?P<think>.*?)</think>\s*<answer>(?P<answer>.*?)</answer>\Z",
    re.DOTALL,
)


@dataclass(frozen=True)
class RewardConfig:
    token_limit: int = 100
    tokenizer: str = "whitespace"
    grammar_version: str = GRAMMAR_VERSION
    token_counter: Callable[[str], int] | None = None

    def __post_init__(self) -> None:
        if self.token_limit < 1:
            raise InputError(f"token_limit must be >= 1, got {self.token_limit}")
        if self.tokenizer not in TOKENIZERS:
            raise InputError(f"unknown tokenizer {self.tokenizer!r}")
        if self.tokenizer == "external" and self.token_counter is None:
            raise InputError("tokenizer 'external' needs a token_counter")
        if self.grammar_version != GRAMMAR_VERSION:
            raise InputError(
                f"unsupported grammar version {self.grammar_version!r}; "
                f"this build implements {GRAMMAR_VERSION!r}"
            )


@dataclass(frozen=True)
class RewardBreakdown:
    format: int
    solution: int
    length: int
    total: int


def count_tokens(text: str, config: RewardConfig) -> int:
    """Token count of the full rollout text under the configured counter."""
    if config.tokenizer == "whitespace":
        return len(text.split())
    if config.tokenizer == "bytes-per-token-approx":
        return math.ceil(len(text.encode("utf-8")) / 4)
    assert config.token_counter is not None
    return int(config.token_counter(text))


def matches_format(text: str) -> bool:
    match = _GRAMMAR_RE.match(text or "")
    if not match:
        return False
    if not match.group("think").strip():
        return False
    return len(FOUR_TUPLE_RE.findall(match.group("answer"))) == 1


def extract_answer(text: str) -> BBox | None:
    """Box for the solution check.

    When the text has answer spans, only the first span's content counts: a
    span without a valid tuple yields no box even if a tuple appears
    elsewhere. Without any span this falls back to the first tuple anywhere.
    """
    if not text:
        return None
    span = ANSWER_SPAN_RE.search(text)
    if span:
        match = FOUR_TUPLE_RE.search(span.group(1))
        if match is None:
            return None
        return bbox_from_numbers(*(float(g) for g in match.groups()))
    return parse_bbox(text)


def reward_breakdown(text: str, gt_box: BBox,
                     config: RewardConfig | None = None) -> RewardBreakdown:
    """Score one rollout against its ground-truth box."""
    config = config or RewardConfig()
    text = text or ""
    fmt = 1 if matches_format(text) else 0
    box = extract_answer(text)
    solution = 1 if box is not None and point_in_box(box.center, gt_box) else 0
    length = 1 if count_tokens(text, config) <= config.token_limit else 0
    return RewardBreakdown(
        format=fmt, solution=solution, length=length, total=fmt + solution + length
    )


def score_rows(rows: Iterable[dict[str, Any]],
               config: RewardConfig | None = None) -> Iterator[dict[str, Any]]:
    """Score JSONL rows {id, text, gt_bbox} into {id, format, solution,
    length, total}. An invalid ground-truth box is an input error naming the
    row id."""
    config = config or RewardConfig()
    for row in rows:
        try:
            row_id = row["id"]
            text = row["text"]
            raw_box = row["gt_bbox"]
        except KeyError as exc:
            raise InputError(f"reward row missing field {exc}") from exc
        if not (isinstance(raw_box, (list, tuple)) and len(raw_box) == 4):
            raise InputError(f"row {row_id!r}: gt_bbox must be a 4-list")
        try:
            gt = BBox(*(float(v) for v in raw_box))
        except (InputError, ValueError, TypeError) as exc:
            raise InputError(f"row {row_id!r}: invalid gt_bbox: {exc}") from exc
        scored = reward_breakdown(str(text), gt, config)
        yield {
            "id": row_id,
            "format": scored.format,
            "solution": scored.solution,
            "length": scored.length,
            "total": scored.total,
        }
