"""End-to-end curation pipeline and its manifest bookkeeping.

Stage order: per-source downsample, difficulty partition (keeping the hard
side), then the configured filter chain (alignment judge, diversity
selection, ambiguity judge), then the review gate. Every stage writes its
output JSONL plus a manifest row holding digests of its config, its input,
and its output content; a later run whose config and input digests match a
recorded row reuses the stored output instead of recomputing. All stage
randomness derives from the run seed crossed with the stage name.
"""

from __future__ import annotations

import hashlib
import json
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from .client import (
    ClientConfig,
    EmbeddingVector,
    HttpVLMClient,
    MockBehavior,
    MockVLMClient,
    VLMClient,
)
from .difficulty import (
    DifficultyPartition,
    PredictionCache,
    map_with_client,
    partition_by_difficulty,
)
from .diversity import EmbeddingMatrix, fit_pca_project, nearest_to_centroids, run_kmeans
from .errors import InputError, JudgeParseError, RequestError, TraceParseError
from .geometry import ResizeConfig
from .jsonl import canonical_dumps, content_digest, read_jsonl, write_jsonl
from .ranker import EligibilityRule
from .records import SOURCES, GroundingRecord, load_records, write_records
from .review import DecisionLog
from .rewards import RewardConfig
from .traces import (
    DEFAULT_FORBIDDEN_PHRASES,
    build_trace_request,
    parse_trace_response,
    validate_trace,
)

FILTER_STAGES = ("alignment", "diversity", "ambiguity")


@dataclass(frozen=True)
class SourceConfig:
    name: str
    path: str
    downsample: float | None = None
    cluster: bool = False

    def __post_init__(self) -> None:
        if self.name not in SOURCES:
            raise InputError(f"unknown source {self.name!r}")
        if self.downsample is not None and not 0.0 < self.downsample <= 1.0:
            raise InputError(
                f"source {self.name}: downsample must be in (0, 1], "
                f"got {self.downsample}"
            )


@dataclass(frozen=True)
class DiversityConfig:
    ratio: float = 0.10
    target_dim: int = 768
    metric: str = "euclidean"

    def __post_init__(self) -> None:
        if not 0.0 < self.ratio <= 1.0:
            raise InputError(f"diversity ratio must be in (0, 1], got {self.ratio}")
        if self.metric not in ("euclidean", "cosine"):
            raise InputError(f"unknown metric {self.metric!r}")


@dataclass(frozen=True)
class PipelineConfig:
    seed: int
    output_dir: str
    sources: tuple[SourceConfig, ...]
    client: ClientConfig = ClientConfig()
    mock: MockBehavior | None = MockBehavior()
    resize: ResizeConfig = ResizeConfig()
    eligibility: EligibilityRule = field(default_factory=EligibilityRule.standard)
    diversity: DiversityConfig = DiversityConfig()
    reward: RewardConfig = RewardConfig()
    filter_order: tuple[str, ...] = FILTER_STAGES
    review_token: str | None = None
    keep_flagged_traces: bool = False
    cache_dir: str | None = None

    def __post_init__(self) -> None:
        if not self.sources:
            raise InputError("config needs at least one source")
        names = [source.name for source in self.sources]
        if len(set(names)) != len(names):
            raise InputError("duplicate source names in config")
        if sorted(self.filter_order) != sorted(FILTER_STAGES):
            raise InputError(
                f"filter_order must be a permutation of {FILTER_STAGES}, "
                f"got {self.filter_order}"
            )
        if self.mock is None and not self.client.endpoint:
            raise InputError("non-mock config needs a client endpoint")

    @property
    def cache_path(self) -> Path:
        return Path(self.cache_dir) if self.cache_dir else Path(self.output_dir) / "cache"

    def stage_seed(self, stage: str) -> int:
        digest = hashlib.sha256(f"{self.seed}:{stage}".encode("utf-8")).digest()
        return int.from_bytes(digest[:8], "big")

    def raw(self) -> dict[str, Any]:
        """Config as a plain dict, used for digests."""
        return {
            "seed": self.seed,
            "sources": [
                {
                    "name": s.name, "path": s.path,
                    "downsample": s.downsample, "cluster": s.cluster,
                }
                for s in self.sources
            ],
            "client": {
                "endpoint": self.client.endpoint, "model": self.client.model,
                "max_inflight": self.client.max_inflight,
                "retry_limit": self.client.retry_limit,
            },
            "mock": None if self.mock is None else {
                "hit_rate": self.mock.hit_rate,
                "positive_rate": self.mock.positive_rate,
                "garble_rate": self.mock.garble_rate,
                "embed_dim": self.mock.embed_dim,
            },
            "resize": {
                "patch": self.resize.patch,
                "min_pixels": self.resize.min_pixels,
                "max_pixels": self.resize.max_pixels,
            },
            "eligibility": {
                "default": self.eligibility.default,
                "thresholds": dict(self.eligibility.thresholds),
            },
            "diversity": {
                "ratio": self.diversity.ratio,
                "target_dim": self.diversity.target_dim,
                "metric": self.diversity.metric,
            },
            "reward": {
                "token_limit": self.reward.token_limit,
                "tokenizer": self.reward.tokenizer,
            },
            "filter_order": list(self.filter_order),
            "keep_flagged_traces": self.keep_flagged_traces,
        }


def load_config(path: str | Path, *, seed_override: int | None = None,
                force_mock: bool = False) -> PipelineConfig:
    """Read a pipeline config document.

    The seed must be stated in the file (no wall-clock fallbacks) unless
    overridden; every source path must exist at load time."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot load config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise InputError(f"config {path} must be a JSON object")
    if seed_override is None and "seed" not in doc:
        raise InputError(f"config {path} must state an explicit seed")
    seed = int(seed_override if seed_override is not None else doc["seed"])
    sources_doc = doc.get("sources")
    if not isinstance(sources_doc, dict) or not sources_doc:
        raise InputError(f"config {path} needs a non-empty 'sources' object")
    base = path.parent
    sources = []
    for name in sorted(sources_doc):
        entry = sources_doc[name]
        source_path = Path(entry["path"])
        if not source_path.is_absolute():
            source_path = base / source_path
        if not source_path.exists():
            raise InputError(f"source {name}: path {source_path} does not exist")
        sources.append(SourceConfig(
            name=name, path=str(source_path),
            downsample=entry.get("downsample"),
            cluster=bool(entry.get("cluster", False)),
        ))
    client_doc = doc.get("client", {})
    client = ClientConfig(
        endpoint=client_doc.get("endpoint", ""),
        model=client_doc.get("model", "mock"),
        timeout=float(client_doc.get("timeout", 60.0)),
        max_inflight=int(client_doc.get("max_inflight", 4)),
        retry_limit=int(client_doc.get("retry_limit", 2)),
        backoff=float(client_doc.get("backoff", 0.5)),
        auth_env=client_doc.get("auth_env", "GUICURATE_API_TOKEN"),
    )
    mock_doc = doc.get("mock")
    if force_mock and mock_doc is None:
        mock_doc = {}
    mock = None
    if mock_doc is not None:
        mock = MockBehavior(
            hit_rate=float(mock_doc.get("hit_rate", 0.5)),
            positive_rate=float(mock_doc.get("positive_rate", 0.75)),
            garble_rate=float(mock_doc.get("garble_rate", 0.0)),
            embed_dim=int(mock_doc.get("embed_dim", 32)),
        )
    resize_doc = doc.get("resize", {})
    resize = ResizeConfig(
        patch=int(resize_doc.get("patch", 28)),
        min_pixels=int(resize_doc.get("min_pixels", 3136)),
        max_pixels=int(resize_doc.get("max_pixels", 846720)),
    )
    eligibility_doc = doc.get("eligibility")
    if eligibility_doc is None:
        eligibility = EligibilityRule.standard()
    else:
        eligibility = EligibilityRule(
            thresholds={
                str(k): int(v)
                for k, v in eligibility_doc.get("thresholds", {}).items()
            },
            default=int(eligibility_doc.get("default", 1)),
        )
    diversity_doc = doc.get("diversity", {})
    diversity = DiversityConfig(
        ratio=float(diversity_doc.get("ratio", 0.10)),
        target_dim=int(diversity_doc.get("target_dim", 768)),
        metric=diversity_doc.get("metric", "euclidean"),
    )
    reward_doc = doc.get("reward", {})
    reward = RewardConfig(
        token_limit=int(reward_doc.get("token_limit", 100)),
        tokenizer=reward_doc.get("tokenizer", "whitespace"),
    )
    output_dir = doc.get("output_dir", "out")
    output_path = Path(output_dir)
    if not output_path.is_absolute():
        output_path = base / output_path
    review_doc = doc.get("review", {})
    return PipelineConfig(
        seed=seed,
        output_dir=str(output_path),
        sources=tuple(sources),
        client=client,
        mock=mock,
        resize=resize,
        eligibility=eligibility,
        diversity=diversity,
        reward=reward,
        filter_order=tuple(doc.get("filter_order", FILTER_STAGES)),
        review_token=review_doc.get("token"),
        keep_flagged_traces=bool(doc.get("keep_flagged_traces", False)),
        cache_dir=doc.get("cache_dir"),
    )


def make_client(config: PipelineConfig) -> VLMClient:
    if config.mock is not None:
        return MockVLMClient(
            config.client, seed=config.seed, behavior=config.mock,
            resize=config.resize,
        )
    return HttpVLMClient(config.client, resize=config.resize)


@dataclass
class StageRow:
    name: str
    input_count: int
    output_count: int
    config_digest: str
    input_digest: str
    content_digest: str
    reused: bool = False
    deferred: int = 0
    errors: int = 0
    pending: int = 0
    accepted: int = 0
    started: float = 0.0
    finished: float = 0.0

    def to_row(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "input_count": self.input_count,
            "output_count": self.output_count,
            "config_digest": self.config_digest,
            "input_digest": self.input_digest,
            "content_digest": self.content_digest,
            "reused": self.reused,
            "deferred": self.deferred,
            "errors": self.errors,
            "pending": self.pending,
            "accepted": self.accepted,
            "started": self.started,
            "finished": self.finished,
        }

    @classmethod
    def from_row(cls, row: dict[str, Any]) -> "StageRow":
        return cls(**{k: row[k] for k in (
            "name", "input_count", "output_count", "config_digest",
            "input_digest", "content_digest", "reused", "deferred", "errors",
            "pending", "accepted", "started", "finished",
        )})


class _JsonlCache:
    """Disk-backed key -> row store; one JSONL file, composite string keys."""

    def __init__(self, path: Path, key_fields: Sequence[str]) -> None:
        self.path = path
        self.key_fields = tuple(key_fields)
        self._rows: dict[tuple[str, ...], dict[str, Any]] = {}
        self._lock = threading.Lock()
        if path.exists():
            for row in read_jsonl(path):
                self._rows[self._key(row)] = row

    def _key(self, row: dict[str, Any]) -> tuple[str, ...]:
        return tuple(str(row[k]) for k in self.key_fields)

    def get(self, **key: Any) -> dict[str, Any] | None:
        return self._rows.get(tuple(str(key[k]) for k in self.key_fields))

    def put(self, row: dict[str, Any]) -> None:
        with self._lock:
            self._rows[self._key(row)] = row

    def flush(self) -> None:
        with self._lock:
            rows = [self._rows[key] for key in sorted(self._rows)]
        write_jsonl(self.path, rows)


class PipelineRun:
    """One pipeline execution over a config. Owns the stage loop, caches,
    and the manifest."""

    def __init__(self, config: PipelineConfig, client: VLMClient | None = None) -> None:
        self.config = config
        self.client = client or make_client(config)
        self.out = Path(config.output_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        cache_dir = config.cache_path
        cache_dir.mkdir(parents=True, exist_ok=True)
        self.predictions = PredictionCache(
            cache_dir / "predictions.jsonl", self.client.config.model
        )
        self.judgments = _JsonlCache(
            cache_dir / "judgments.jsonl", ("model", "kind", "id")
        )
        self.embeddings = _JsonlCache(cache_dir / "embeddings.jsonl", ("model", "id"))
        self.rows: list[StageRow] = []
        self.partition: DifficultyPartition | None = None
        self._previous = self._load_previous_manifest()

    # -- manifest ---------------------------------------------------------

    @property
    def manifest_path(self) -> Path:
        return self.out / "manifest.json"

    def _load_previous_manifest(self) -> dict[str, StageRow]:
        if not self.manifest_path.exists():
            return {}
        try:
            doc = json.loads(self.manifest_path.read_text(encoding="utf-8"))
            return {
                row["name"]: StageRow.from_row(row) for row in doc.get("stages", [])
            }
        except (json.JSONDecodeError, KeyError, TypeError):
            return {}

    def _write_manifest(self) -> None:
        doc = {
            "seed": self.config.seed,
            "config_digest": hashlib.sha256(
                canonical_dumps(self.config.raw()).encode("utf-8")
            ).hexdigest(),
            "stages": [row.to_row() for row in self.rows],
        }
        self.manifest_path.write_text(
            json.dumps(doc, indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
        )

    # -- stage loop -------------------------------------------------------

    def _stage_path(self, name: str) -> Path:
        return self.out / f"{name}.jsonl"

    def _run_stage(self, name: str, stage_config: dict[str, Any],
                   records: list[GroundingRecord],
                   fn: Callable[[list[GroundingRecord], StageRow],
                                list[GroundingRecord]]
                   ) -> list[GroundingRecord]:
        config_digest = hashlib.sha256(
            canonical_dumps(stage_config).encode("utf-8")
        ).hexdigest()
        input_digest = content_digest([rec.to_row() for rec in records])
        row = StageRow(
            name=name, input_count=len(records), output_count=0,
            config_digest=config_digest, input_digest=input_digest,
            content_digest="", started=time.time(),
        )
        previous = self._previous.get(name)
        out_path = self._stage_path(name)
        # The review stage always recomputes: its counts track the decision
        # log, which moves independently of config and input.
        if (
            name != "review"
            and previous is not None
            and previous.config_digest == config_digest
            and previous.input_digest == input_digest
            and out_path.exists()
        ):
            stored = load_records(out_path)
            stored_digest = content_digest([rec.to_row() for rec in stored])
            if stored_digest == previous.content_digest:
                row.reused = True
                row.output_count = len(stored)
                row.content_digest = stored_digest
                row.deferred = previous.deferred
                row.errors = previous.errors
                row.finished = time.time()
                self.rows.append(row)
                self._write_manifest()
                return stored
        result = fn(records, row)
        result = sorted(result, key=lambda rec: rec.id)
        out_ids = {rec.id for rec in result}
        in_ids = {rec.id for rec in records}
        if not out_ids <= in_ids:
            raise InputError(f"stage {name} produced records outside its input")
        write_records(out_path, result)
        row.output_count = len(result)
        row.content_digest = content_digest([rec.to_row() for rec in result])
        row.finished = time.time()
        self.rows.append(row)
        self._write_manifest()
        return result

    # -- stage bodies -----------------------------------------------------

    def _load_sources(self) -> list[GroundingRecord]:
        records: list[GroundingRecord] = []
        seen: set[str] = set()
        for source in self.config.sources:
            loaded = load_records(source.path)
            for rec in loaded:
                if rec.source != source.name:
                    raise InputError(
                        f"{source.path}: record {rec.id} has source "
                        f"{rec.source!r}, expected {source.name!r}"
                    )
                if rec.id in seen:
                    raise InputError(f"duplicate record id across sources: {rec.id}")
                seen.add(rec.id)
            records.extend(loaded)
        return sorted(records, key=lambda rec: rec.id)

    def _downsample(self, records: list[GroundingRecord],
                    row: StageRow) -> list[GroundingRecord]:
        seed = self.config.stage_seed("downsample")
        kept: list[GroundingRecord] = []
        fractions = {s.name: s.downsample for s in self.config.sources}
        by_source: dict[str, list[GroundingRecord]] = {}
        for rec in records:
            by_source.setdefault(rec.source, []).append(rec)
        for source in sorted(by_source):
            bucket = sorted(by_source[source], key=lambda rec: rec.id)
            fraction = fractions.get(source)
            if fraction is None:
                kept.extend(bucket)
                continue
            # round-half-up keeps 0.5 * n from collapsing to floor(n/2) - 1
            count = int(np.floor(fraction * len(bucket) + 0.5))
            if count >= len(bucket):
                kept.extend(bucket)
                continue
            digest = hashlib.sha256(f"{seed}:{source}".encode("utf-8")).digest()
            rng = np.random.default_rng(int.from_bytes(digest[:8], "big"))
            chosen = sorted(rng.choice(len(bucket), size=count, replace=False))
            kept.extend(bucket[i] for i in chosen)
        return kept

    def _difficulty(self, records: list[GroundingRecord],
                    row: StageRow) -> list[GroundingRecord]:
        partition = partition_by_difficulty(records, self.client, self.predictions)
        self.partition = partition
        row.deferred = len(partition.deferred)
        write_records(self.out / "easy.jsonl", partition.easy)
        write_jsonl(self.out / "outcomes.jsonl",
                    (outcome.to_row() for outcome in partition.outcomes))
        write_jsonl(self.out / "deferred.jsonl",
                    ({"id": rec_id, "error": err} for rec_id, err in partition.deferred))
        return partition.hard

    def _judge_filter(self, kind: str, records: list[GroundingRecord],
                      row: StageRow) -> list[GroundingRecord]:
        model = self.client.config.model
        pending = [
            rec for rec in records
            if self.judgments.get(model=model, kind=kind, id=rec.id) is None
        ]
        fetched = map_with_client(
            pending,
            lambda rec: self.client.binary_judge(kind, rec, rec.gt_box),
            self.client.config.max_inflight,
        )
        kept: list[GroundingRecord] = []
        for rec in records:
            cached = self.judgments.get(model=model, kind=kind, id=rec.id)
            if cached is not None:
                verdict = cached["verdict"]
            else:
                outcome = fetched[rec.id]
                if isinstance(outcome, (JudgeParseError, RequestError)):
                    # Unjudgeable records drop out but are counted, so the
                    # stage totals still reconcile.
                    row.errors += 1
                    continue
                if isinstance(outcome, Exception):
                    raise outcome
                verdict = outcome
                self.judgments.put({
                    "model": model, "kind": kind, "id": rec.id,
                    "bbox": rec.gt_box.as_list(), "verdict": verdict,
                })
            if verdict == "positive":
                kept.append(rec)
        self.judgments.flush()
        return kept

    def _embed_records(self, records: Sequence[GroundingRecord]) -> EmbeddingMatrix:
        model = self.client.config.model
        pending = [
            rec for rec in records
            if self.embeddings.get(model=model, id=rec.id) is None
        ]
        fetched = map_with_client(
            pending, self.client.embed, self.client.config.max_inflight
        )
        ids: list[str] = []
        rows: list[tuple[float, ...]] = []
        for rec in sorted(records, key=lambda r: r.id):
            cached = self.embeddings.get(model=model, id=rec.id)
            if cached is not None:
                vector = tuple(float(v) for v in cached["vector"])
            else:
                outcome = fetched[rec.id]
                if isinstance(outcome, Exception):
                    raise outcome
                assert isinstance(outcome, EmbeddingVector)
                vector = outcome.values
                self.embeddings.put({"model": model, "id": rec.id,
                                     "vector": list(vector)})
            ids.append(rec.id)
            rows.append(vector)
        self.embeddings.flush()
        return EmbeddingMatrix(ids=ids, rows=np.array(rows, dtype=np.float64))

    def _diversity(self, records: list[GroundingRecord],
                   row: StageRow) -> list[GroundingRecord]:
        clustered_sources = {s.name for s in self.config.sources if s.cluster}
        to_cluster = sorted(
            (rec for rec in records if rec.source in clustered_sources),
            key=lambda rec: rec.id,
        )
        passthrough = [rec for rec in records if rec.source not in clustered_sources]
        if not to_cluster:
            return records
        matrix = self._embed_records(to_cluster)
        diversity = self.config.diversity
        rows = matrix.rows
        if diversity.metric == "cosine":
            norms = np.linalg.norm(rows, axis=1, keepdims=True)
            rows = np.where(norms > 0.0, rows / np.maximum(norms, 1e-12), rows)
            matrix = EmbeddingMatrix(ids=matrix.ids, rows=rows)
        n = len(to_cluster)
        k = int(np.ceil(diversity.ratio * n))
        if n == 1:
            kept_ids = [matrix.ids[0]]
            report: dict[str, Any] = {"k": 1, "inertia": 0.0, "sizes": [1]}
        else:
            _, projected = fit_pca_project(matrix, target_dim=diversity.target_dim)
            clustering = run_kmeans(
                projected, k, self.config.stage_seed("diversity"), ids=matrix.ids
            )
            kept_ids = nearest_to_centroids(clustering, matrix.ids, projected)
            sizes = [0] * clustering.k
            for cluster in clustering.assignment.values():
                sizes[cluster] += 1
            report = {
                "k": clustering.k,
                "inertia": clustering.inertia,
                "iterations": len(clustering.inertia_history),
                "sizes": sizes,
            }
        (self.out / "clustering.json").write_text(
            json.dumps(report, indent=2) + "\n", encoding="utf-8"
        )
        kept_set = set(kept_ids)
        return passthrough + [rec for rec in to_cluster if rec.id in kept_set]

    def _review(self, records: list[GroundingRecord],
                row: StageRow) -> list[GroundingRecord]:
        log = DecisionLog(self.out / "decisions.jsonl")
        effective = log.effective()
        row.accepted = sum(
            1 for rec in records
            if rec.id in effective and effective[rec.id].verdict == "accept"
        )
        decided = sum(1 for rec in records if rec.id in effective)
        row.pending = len(records) - decided
        return records

    # -- public entry points ----------------------------------------------

    def execute(self, until: str | None = None) -> list[StageRow]:
        records = self._load_sources()
        plan: list[tuple[str, dict[str, Any],
                         Callable[[list[GroundingRecord], StageRow],
                                  list[GroundingRecord]]]] = []
        plan.append((
            "downsample",
            {
                "stage": "downsample",
                "seed": self.config.stage_seed("downsample"),
                "fractions": {
                    s.name: s.downsample for s in self.config.sources
                },
            },
            self._downsample,
        ))
        plan.append((
            "difficulty",
            {
                "stage": "difficulty",
                "model": self.client.config.model,
                "resize": [self.config.resize.patch, self.config.resize.min_pixels,
                           self.config.resize.max_pixels],
                "mock": self.config.raw()["mock"],
                "seed": self.config.seed,
            },
            self._difficulty,
        ))
        for stage in self.config.filter_order:
            if stage == "alignment":
                plan.append((
                    "alignment",
                    {
                        "stage": "alignment",
                        "model": self.client.config.model,
                        "mock": self.config.raw()["mock"],
                        "seed": self.config.seed,
                    },
                    lambda recs, row: self._judge_filter("alignment", recs, row),
                ))
            elif stage == "ambiguity":
                plan.append((
                    "ambiguity",
                    {
                        "stage": "ambiguity",
                        "model": self.client.config.model,
                        "mock": self.config.raw()["mock"],
                        "seed": self.config.seed,
                    },
                    lambda recs, row: self._judge_filter("ambiguity", recs, row),
                ))
            else:
                plan.append((
                    "diversity",
                    {
                        "stage": "diversity",
                        "model": self.client.config.model,
                        "mock": self.config.raw()["mock"],
                        "seed": self.config.stage_seed("diversity"),
                        "ratio": self.config.diversity.ratio,
                        "target_dim": self.config.diversity.target_dim,
                        "metric": self.config.diversity.metric,
                        "clustered": sorted(
                            s.name for s in self.config.sources if s.cluster
                        ),
                    },
                    self._diversity,
                ))
        plan.append((
            "review",
            {"stage": "review"},
            self._review,
        ))
        for name, stage_config, fn in plan:
            records = self._run_stage(name, stage_config, records, fn)
            if until is not None and name == until:
                break
        return self.rows


def run_pipeline(config: PipelineConfig, client: VLMClient | None = None,
                 until: str | None = None) -> PipelineRun:
    run = PipelineRun(config, client)
    run.execute(until=until)
    return run


def generate_traces(records: Sequence[GroundingRecord], client: VLMClient,
                    out_path: str | Path, *,
                    forbidden_phrases: Sequence[str] = DEFAULT_FORBIDDEN_PHRASES
                    ) -> list[dict[str, Any]]:
    """Produce explanation traces for records and persist them as JSONL rows
    {id, trace, violations}. A completion that cannot be parsed yields a null
    trace with the 'unparseable' violation instead of halting the batch."""
    rows: list[dict[str, Any]] = []
    for rec in sorted(records, key=lambda r: r.id):
        request = build_trace_request(rec)
        raw = client.complete(request.prompt, request.image_png)
        try:
            trace = parse_trace_response(raw)
        except TraceParseError:
            rows.append({"id": rec.id, "trace": None, "violations": ["unparseable"]})
            continue
        result = validate_trace(rec.id, trace, forbidden_phrases)
        rows.append({
            "id": rec.id, "trace": result.trace,
            "violations": list(result.violations),
        })
    write_jsonl(out_path, rows)
    return rows


@dataclass
class AssemblyResult:
    rows: list[dict[str, Any]]
    accepted: tuple[str, ...]
    rejected: tuple[str, ...]
    pending: tuple[str, ...]
    unknown_decisions: tuple[str, ...]
    flagged_traces: tuple[str, ...]


def assemble_final(survivors: Sequence[GroundingRecord], log: DecisionLog,
                   trace_rows: Sequence[dict[str, Any]] | None = None, *,
                   keep_flagged_traces: bool = False) -> AssemblyResult:
    """Merge review decisions (and optional traces) into the final dataset.

    Only accepted records are emitted; pending and rejected ids are reported,
    as are decisions for unknown ids. A trace is attached when it parsed and
    either has no violations or flagged traces are explicitly kept."""
    by_id = {rec.id: rec for rec in survivors}
    effective = log.effective()
    unknown = tuple(sorted(set(effective) - set(by_id)))
    traces = {}
    flagged: list[str] = []
    for row in trace_rows or []:
        rec_id = str(row.get("id"))
        trace = row.get("trace")
        violations = row.get("violations") or []
        if trace is None:
            continue
        if violations:
            flagged.append(rec_id)
            if not keep_flagged_traces:
                continue
        traces[rec_id] = trace
    accepted: list[str] = []
    rejected: list[str] = []
    pending: list[str] = []
    rows: list[dict[str, Any]] = []
    for rec_id in sorted(by_id):
        decision = effective.get(rec_id)
        if decision is None:
            pending.append(rec_id)
            continue
        if decision.verdict == "reject":
            rejected.append(rec_id)
            continue
        accepted.append(rec_id)
        row = by_id[rec_id].to_row()
        if rec_id in traces:
            row["trace"] = traces[rec_id]
        rows.append(row)
    return AssemblyResult(
        rows=rows,
        accepted=tuple(accepted),
        rejected=tuple(rejected),
        pending=tuple(pending),
        unknown_decisions=unknown,
        flagged_traces=tuple(sorted(flagged)),
    )
