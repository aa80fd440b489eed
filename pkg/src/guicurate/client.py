"""Vision-language backend clients.

Four capabilities are used by the stages: grounding (predict a box for an
instruction), embeddings, binary judgments, and free-form completions. The
HTTP client talks to an OpenAI-style chat endpoint; the mock client is a pure
function of (seed, request) and exists so the whole pipeline runs offline and
deterministically.
"""

from __future__ import annotations

import base64
import hashlib
import io
import os
import re
import threading
import time
from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np

from .errors import ConsistencyError, InputError, JudgeParseError, RequestError
from .geometry import (
    BBox,
    ImageDims,
    ResizeConfig,
    clamp_bbox,
    parse_bbox,
    rescale_bbox,
)
from .records import GroundingRecord

JUDGE_KINDS = ("alignment", "ambiguity")

_JUDGE_TOKEN_RE = re.compile(r"^\s*(yes|no)\b", re.IGNORECASE)


def parse_judge_response(raw: str) -> str:
    """Map a judge reply onto 'positive'/'negative' by its leading token.

    Only a leading yes/no (any case, punctuation allowed after) counts;
    anything else raises JudgeParseError carrying the raw text.
    """
    match = _JUDGE_TOKEN_RE.match(raw or "")
    if not match:
        raise JudgeParseError(
            f"judge reply starts with neither yes nor no: {raw!r:.200}", raw=raw or ""
        )
    return "positive" if match.group(1).lower() == "yes" else "negative"


@dataclass(frozen=True)
class ClientConfig:
    endpoint: str = ""
    model: str = "mock"
    timeout: float = 60.0
    max_inflight: int = 4
    retry_limit: int = 2
    backoff: float = 0.5
    auth_env: str = "GUICURATE_API_TOKEN"

    def __post_init__(self) -> None:
        if self.timeout <= 0:
            raise InputError(f"timeout must be positive, got {self.timeout}")
        if self.max_inflight < 1:
            raise InputError(f"max_inflight must be >= 1, got {self.max_inflight}")
        if self.retry_limit < 0:
            raise InputError(f"retry_limit must be >= 0, got {self.retry_limit}")
        if self.backoff < 0:
            raise InputError(f"backoff must be >= 0, got {self.backoff}")


@dataclass(frozen=True)
class GroundResult:
    """One grounding prediction.

    parsed_box is mapped back to the record's original image space; model_dims
    records the resized space the model actually saw. Out-of-frame parses are
    clipped; a box that degenerates under clipping counts as unparseable.
    """

    raw_output: str
    parsed_box: BBox | None
    model_dims: ImageDims


@dataclass(frozen=True)
class EmbeddingVector:
    values: tuple[float, ...]

    def __post_init__(self) -> None:
        if not self.values:
            raise InputError("embedding must be non-empty")

    @property
    def dim(self) -> int:
        return len(self.values)


class VLMClient:
    """Capability interface shared by the HTTP and mock backends."""

    config: ClientConfig
    resize: ResizeConfig

    def __init__(self, config: ClientConfig, *, resize: ResizeConfig | None = None) -> None:
        self.config = config
        self.resize = resize or ResizeConfig()
        self.calls: dict[str, int] = {"ground": 0, "embed": 0, "judge": 0, "complete": 0}
        self._calls_lock = threading.Lock()
        self._embed_dim: int | None = None
        self._dim_lock = threading.Lock()

    def _count(self, op: str) -> None:
        with self._calls_lock:
            self.calls[op] = self.calls.get(op, 0) + 1

    def _check_embed_dim(self, dim: int) -> None:
        # Embedding dimension is pinned by the first response of a run.
        with self._dim_lock:
            if self._embed_dim is None:
                self._embed_dim = dim
            elif dim != self._embed_dim:
                raise ConsistencyError(
                    f"embedding dim changed mid-run: {self._embed_dim} then {dim}"
                )

    def ground(self, record: GroundingRecord) -> GroundResult:
        raise NotImplementedError

    def embed(self, record: GroundingRecord) -> EmbeddingVector:
        raise NotImplementedError

    def binary_judge(self, kind: str, record: GroundingRecord, box: BBox) -> str:
        raise NotImplementedError

    def complete(self, prompt: str, image_png: bytes | None = None) -> str:
        raise NotImplementedError

    def _finish_ground(self, record: GroundingRecord, raw: str,
                       model_dims: ImageDims) -> GroundResult:
        """Parse raw output in model space and map the box back to the
        record's original space."""
        box = parse_bbox(raw)
        if box is not None:
            box = clamp_bbox(box, model_dims)
        if box is not None:
            box = rescale_bbox(box, model_dims, record.dims)
            box = clamp_bbox(box, record.dims)
        return GroundResult(raw_output=raw, parsed_box=box, model_dims=model_dims)


def _digest(*parts: Any) -> bytes:
    text = "\x1f".join(str(p) for p in parts)
    return hashlib.sha256(text.encode("utf-8")).digest()


def _unit(*parts: Any) -> float:
    """Deterministic draw in [0, 1) keyed by the parts."""
    return int.from_bytes(_digest(*parts)[:8], "big") / 2.0**64


@dataclass(frozen=True)
class MockBehavior:
    hit_rate: float = 0.5
    positive_rate: float = 0.75
    garble_rate: float = 0.0
    embed_dim: int = 32

    def __post_init__(self) -> None:
        for name in ("hit_rate", "positive_rate", "garble_rate"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise InputError(f"{name} must be in [0, 1], got {value}")
        if self.embed_dim < 1:
            raise InputError(f"embed_dim must be >= 1, got {self.embed_dim}")


class MockVLMClient(VLMClient):
    """Offline backend.

    Every response is a pure function of (seed, request): draws are keyed by
    sha256 over (seed, operation, record id), geometry comes from the record
    itself. A grounding hit returns the ground-truth box in model space; a
    miss returns a plausible box whose center lies outside the truth.
    """

    def __init__(self, config: ClientConfig | None = None, *, seed: int = 0,
                 behavior: MockBehavior | None = None,
                 resize: ResizeConfig | None = None) -> None:
        super().__init__(config or ClientConfig(), resize=resize)
        self.seed = seed
        self.behavior = behavior or MockBehavior()

    def ground(self, record: GroundingRecord) -> GroundResult:
        self._count("ground")
        model_dims = self.resize.apply(record.dims)
        if _unit(self.seed, "garble", record.id) < self.behavior.garble_rate:
            raw = (
                "<think>The target is unclear in this view.</think>"
                "<answer>unable to locate the element</answer>"
            )
            return self._finish_ground(record, raw, model_dims)
        scaled_gt = rescale_bbox(record.gt_box, record.dims, model_dims)
        if _unit(self.seed, "hit", record.id) < self.behavior.hit_rate:
            box = self._round_box(scaled_gt, model_dims)
        else:
            box = self._miss_box(record, scaled_gt, model_dims)
        raw = (
            f"<think>Looking for: {record.instruction.strip()}</think>"
            f"<answer>[{box.x1:.0f},{box.y1:.0f},{box.x2:.0f},{box.y2:.0f}]</answer>"
        )
        return self._finish_ground(record, raw, model_dims)

    @staticmethod
    def _round_box(box: BBox, dims: ImageDims) -> BBox:
        x1 = max(0.0, min(round(box.x1), dims.width - 1))
        y1 = max(0.0, min(round(box.y1), dims.height - 1))
        x2 = min(float(dims.width), max(round(box.x2), x1 + 1))
        y2 = min(float(dims.height), max(round(box.y2), y1 + 1))
        return BBox(x1, y1, x2, y2)

    def _miss_box(self, record: GroundingRecord, scaled_gt: BBox,
                  dims: ImageDims) -> BBox:
        # Integer coordinates with a 2 px clearance: the box survives the
        # text round-trip exactly and float noise cannot flip the miss.
        half_w = max(2, dims.width // 40)
        half_h = max(2, dims.height // 40)
        for attempt in range(32):
            cx = round(_unit(self.seed, "miss-x", record.id, attempt) * dims.width)
            cy = round(_unit(self.seed, "miss-y", record.id, attempt) * dims.height)
            cx = min(max(cx, half_w), dims.width - half_w)
            cy = min(max(cy, half_h), dims.height - half_h)
            if self._clears(cx, cy, scaled_gt, margin=2.0):
                return BBox(cx - half_w, cy - half_h, cx + half_w, cy + half_h)
        # Ground truth nearly fills the frame: fall back to the corner
        # farthest from its center, nudged inside.
        center = scaled_gt.center
        corner_x = 0 if center.x > dims.width / 2 else dims.width
        corner_y = 0 if center.y > dims.height / 2 else dims.height
        cx = min(max(corner_x, half_w), dims.width - half_w)
        cy = min(max(corner_y, half_h), dims.height - half_h)
        return BBox(cx - half_w, cy - half_h, cx + half_w, cy + half_h)

    @staticmethod
    def _clears(cx: float, cy: float, box: BBox, *, margin: float) -> bool:
        return (
            cx < box.x1 - margin
            or cx > box.x2 + margin
            or cy < box.y1 - margin
            or cy > box.y2 + margin
        )

    def embed(self, record: GroundingRecord) -> EmbeddingVector:
        self._count("embed")
        key = _digest(self.seed, "embed", record.instruction, record.image_ref)
        rng = np.random.default_rng(int.from_bytes(key[:8], "big"))
        values = rng.standard_normal(self.behavior.embed_dim)
        self._check_embed_dim(self.behavior.embed_dim)
        return EmbeddingVector(tuple(float(v) for v in values))

    def binary_judge(self, kind: str, record: GroundingRecord, box: BBox) -> str:
        if kind not in JUDGE_KINDS:
            raise InputError(f"unknown judge kind {kind!r}")
        self._count("judge")
        u = _unit(self.seed, "judge", kind, record.id, *box.as_list())
        raw = "Yes, it does." if u < self.behavior.positive_rate else "No, it does not."
        return parse_judge_response(raw)

    def complete(self, prompt: str, image_png: bytes | None = None) -> str:
        if not prompt:
            raise InputError("prompt must be non-empty")
        self._count("complete")
        tag = _digest(self.seed, "complete", prompt).hex()[:8]
        return (
            '{"response": "The screen shows a compact settings panel (case %s). '
            'Activate the control that matches the request near the top edge."}' % tag
        )


@dataclass(frozen=True)
class RequestShape:
    """Field layout of the backend's request/response bodies. Adjust these
    paths when pointing at a server with a different envelope."""

    chat_path: str = "/chat/completions"
    embeddings_path: str = "/embeddings"
    text_path: Sequence[Any] = ("choices", 0, "message", "content")
    embedding_path: Sequence[Any] = ("data", 0, "embedding")


def _walk(body: Any, path: Sequence[Any]) -> Any:
    node = body
    for step in path:
        if isinstance(step, int):
            node = node[step]
        else:
            node = node[step]
    return node


DEFAULT_JUDGE_PROMPTS = {
    "alignment": (
        "Look at the screenshot. Does the box {bbox} contain the interface "
        "element that the instruction refers to? Instruction: {instruction}\n"
        "Answer yes or no."
    ),
    "ambiguity": (
        "Look at the screenshot. Is the box {bbox} the single unambiguous "
        "target for this instruction, with no other plausible match visible? "
        "Instruction: {instruction}\nAnswer yes or no."
    ),
}


class HttpVLMClient(VLMClient):
    """Backend speaking an OpenAI-style chat/embeddings HTTP protocol.

    Transport failures retry with exponential backoff up to the configured
    limit; the per-client semaphore bounds in-flight requests. A bearer token
    is read from the environment variable named in the config when present.
    """

    def __init__(self, config: ClientConfig, *, resize: ResizeConfig | None = None,
                 shape: RequestShape | None = None,
                 judge_prompts: dict[str, str] | None = None,
                 transport: Any | None = None) -> None:
        super().__init__(config, resize=resize)
        if not config.endpoint:
            raise InputError("HTTP client needs a non-empty endpoint")
        import httpx

        self.shape = shape or RequestShape()
        self.judge_prompts = dict(DEFAULT_JUDGE_PROMPTS)
        if judge_prompts:
            self.judge_prompts.update(judge_prompts)
        headers = {}
        token = os.environ.get(config.auth_env, "")
        if token:
            headers["Authorization"] = f"Bearer {token}"
        self._client = httpx.Client(
            base_url=config.endpoint.rstrip("/"),
            timeout=config.timeout,
            headers=headers,
            transport=transport,
        )
        self._gate = threading.BoundedSemaphore(config.max_inflight)

    def close(self) -> None:
        self._client.close()

    def _post(self, path: str, payload: dict[str, Any], *,
              record_id: str | None = None) -> Any:
        import httpx

        attempts = self.config.retry_limit + 1
        last_exc: Exception | None = None
        for attempt in range(attempts):
            try:
                with self._gate:
                    response = self._client.post(path, json=payload)
                response.raise_for_status()
                return response.json()
            except httpx.HTTPError as exc:
                last_exc = exc
                if attempt + 1 < attempts:
                    time.sleep(self.config.backoff * (2.0**attempt))
        raise RequestError(
            f"request to {path} failed after {attempts} attempts: {last_exc}",
            record_id=record_id,
            attempts=attempts,
        )

    def _chat_text(self, body: Any, *, record_id: str | None) -> str:
        try:
            text = _walk(body, self.shape.text_path)
        except (KeyError, IndexError, TypeError) as exc:
            raise RequestError(
                f"malformed chat response body for record {record_id!r}: {exc}",
                record_id=record_id,
                attempts=1,
            ) from exc
        if not isinstance(text, str):
            raise RequestError(
                f"chat response text is not a string for record {record_id!r}",
                record_id=record_id,
                attempts=1,
            )
        return text

    def _image_part(self, png: bytes) -> dict[str, Any]:
        encoded = base64.b64encode(png).decode("ascii")
        return {
            "type": "image_url",
            "image_url": {"url": f"data:image/png;base64,{encoded}"},
        }

    def _load_resized_png(self, record: GroundingRecord) -> tuple[bytes, ImageDims]:
        from PIL import Image

        model_dims = self.resize.apply(record.dims)
        try:
            with Image.open(record.image_ref) as img:
                img = img.convert("RGB").resize((model_dims.width, model_dims.height))
                buf = io.BytesIO()
                img.save(buf, format="PNG")
        except OSError as exc:
            raise InputError(f"record {record.id}: cannot read image: {exc}") from exc
        return buf.getvalue(), model_dims

    def ground(self, record: GroundingRecord) -> GroundResult:
        self._count("ground")
        png, model_dims = self._load_resized_png(record)
        payload = {
            "model": self.config.model,
            "messages": [
                {
                    "role": "user",
                    "content": [
                        self._image_part(png),
                        {
                            "type": "text",
                            "text": (
                                "Locate the element for this instruction and reply "
                                "with <think>...</think><answer>[x1,y1,x2,y2]</answer>. "
                                f"Instruction: {record.instruction}"
                            ),
                        },
                    ],
                }
            ],
        }
        body = self._post(self.shape.chat_path, payload, record_id=record.id)
        raw = self._chat_text(body, record_id=record.id)
        return self._finish_ground(record, raw, model_dims)

    def embed(self, record: GroundingRecord) -> EmbeddingVector:
        self._count("embed")
        payload = {
            "model": self.config.model,
            "input": f"{record.instruction}\n{record.image_ref}",
        }
        body = self._post(self.shape.embeddings_path, payload, record_id=record.id)
        try:
            values = _walk(body, self.shape.embedding_path)
            vector = EmbeddingVector(tuple(float(v) for v in values))
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise RequestError(
                f"malformed embedding body for record {record.id!r}: {exc}",
                record_id=record.id,
                attempts=1,
            ) from exc
        self._check_embed_dim(vector.dim)
        return vector

    def binary_judge(self, kind: str, record: GroundingRecord, box: BBox) -> str:
        if kind not in JUDGE_KINDS:
            raise InputError(f"unknown judge kind {kind!r}")
        self._count("judge")
        png, _ = self._load_resized_png(record)
        prompt = self.judge_prompts[kind].format(
            bbox=[round(v, 1) for v in box.as_list()], instruction=record.instruction
        )
        payload = {
            "model": self.config.model,
            "messages": [
                {
                    "role": "user",
                    "content": [self._image_part(png), {"type": "text", "text": prompt}],
                }
            ],
        }
        body = self._post(self.shape.chat_path, payload, record_id=record.id)
        return parse_judge_response(self._chat_text(body, record_id=record.id))

    def complete(self, prompt: str, image_png: bytes | None = None) -> str:
        if not prompt:
            raise InputError("prompt must be non-empty")
        self._count("complete")
        content: list[dict[str, Any]] = []
        if image_png is not None:
            content.append(self._image_part(image_png))
        content.append({"type": "text", "text": prompt})
        payload = {
            "model": self.config.model,
            "messages": [{"role": "user", "content": content}],
        }
        body = self._post(self.shape.chat_path, payload)
        return self._chat_text(body, record_id=None)
