"""tvskit: temporal visual screening toolkit.

Trims a video to the segments a question actually needs and rewrites the
question to match, scores predicted segment sets against ground truth,
clusters candidate keyframes adaptively, and synthesizes the cooking-step
QA benchmark the screening loop is evaluated on.
"""

__version__ = "0.1.0"

from .intervals import (  # noqa: F401
    SegmentSet,
    ScreeningPair,
    TimeRange,
    VideoMeta,
    intersect,
    normalize,
    total_duration,
    union,
)
from .metrics import MetricsReport, evaluate, score_pair  # noqa: F401
from .clustering import (  # noqa: F401
    Clustering,
    IsodataClustering,
    IsodataParams,
    isodata_cluster,
    read_embeddings,
    select_keyframes,
    write_embeddings,
)
from .viewer import KeyframeIndex, Viewer, build_index, prep  # noqa: F401
from .agents import (  # noqa: F401
    HistoryTracker,
    LauncherOutput,
    ScreeningConfig,
    ScreeningResult,
    ValidatorOutput,
    run_tvs,
    run_tvs_simple,
)
from .tooldsl import (  # noqa: F401
    ToolPlan,
    execute_plan,
    format_plan,
    parse_plan,
    run_tvs_blind,
)
from .benchgen import (  # noqa: F401
    QAItem,
    StepAnnotation,
    Triplet,
    connectable,
    extract_triplets,
    group_annotations,
    instantiate,
    overlap_ratio,
    split_dataset,
)
