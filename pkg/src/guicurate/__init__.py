"""Curation, reward, and evaluation toolkit for GUI visual-grounding data."""

from .client import (
    ClientConfig,
    EmbeddingVector,
    GroundResult,
    HttpVLMClient,
    MockBehavior,
    MockVLMClient,
    VLMClient,
    parse_judge_response,
)
from .difficulty import (
    DifficultyOutcome,
    DifficultyPartition,
    PredictionCache,
    partition_by_difficulty,
)
from .diversity import (
    Clustering,
    EmbeddingMatrix,
    PCAProjection,
    fit_pca_project,
    nearest_to_centroids,
    run_kmeans,
    select_diverse,
)
from .errors import (
    ConsistencyError,
    CurationError,
    InputError,
    JudgeParseError,
    RequestError,
    TraceParseError,
)
from .geometry import (
    BBox,
    ImageDims,
    Point,
    ResizeConfig,
    center_hit,
    parse_bbox,
    point_in_box,
    rescale_bbox,
    smart_resize,
)
from .metrics import (
    ClassificationReport,
    ElementAccuracy,
    GroundingReport,
    classification_report,
    element_accuracy,
    grounding_report,
    macro_average,
)
from .pipeline import (
    AssemblyResult,
    PipelineConfig,
    PipelineRun,
    assemble_final,
    generate_traces,
    load_config,
    run_pipeline,
)
from .ranker import (
    EligibilityRule,
    RankerTriplet,
    build_training_triplets,
    expand_benchmark_binary,
    label_counts,
    negative_fraction,
)
from .records import GroundingRecord, group_by_image, load_records, write_records
from .review import DecisionLog, ReviewDecision, create_review_app, review_stats
from .rewards import (
    RewardBreakdown,
    RewardConfig,
    count_tokens,
    extract_answer,
    matches_format,
    reward_breakdown,
    score_rows,
)
from .traces import (
    OverlayStyle,
    TraceRequest,
    TraceResult,
    build_trace_request,
    count_sentences,
    parse_trace_response,
    validate_trace,
)

__version__ = "0.1.0"
