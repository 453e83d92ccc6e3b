"""Scenario-driven inference benchmarking harness.

Generates query traffic under the four standard load scenarios against
pluggable backends, runs declarative or worker-hosted pre/post-processing,
and reports throughput, percentile latencies, accuracy, and leveled
profiling breakdowns.
"""

from .clock import Clock, RealClock, VirtualClock, make_clock
from .dataset import (
    DatasetStore,
    generate_classification_dataset,
    generate_image_dataset,
    load_dataset,
    load_labels,
    load_store,
    save_dataset,
    save_labels,
)
from .loadgen import (
    LatencyRecord,
    RunResult,
    ScenarioConfig,
    percentile,
    run_multistream,
    run_offline,
    run_scenario,
    run_server,
    run_single_stream,
)
from .manifest import (
    Manifest,
    build_ctx,
    load_manifest,
    matches_constraint,
    parse_manifest,
    resolve_model_source,
    serialize_manifest,
    verify_checksum,
)
from .metrics import (
    AccuracyResult,
    RunReport,
    parse_report,
    serialize_report,
    summarize,
    top1_accuracy,
)
from .processor import (
    BuiltinPipeline,
    CallablePipeline,
    ExternalPipeline,
    Pipeline,
    pipeline_from_manifest,
)
from .sut import (
    LatencyModel,
    LayerPlan,
    QueryResponse,
    QuerySample,
    SimulatedBackend,
    SimulatedBackendConfig,
    Sut,
    predicted_class,
)
from .tensor import (
    Ctx,
    ElementType,
    HookId,
    Tensor,
    decode_frame,
    element_count,
    encode_frame,
    layout_convert,
)
from .trace import (
    AlignedTrace,
    Level,
    Span,
    SpanRecorder,
    TraceSet,
    align_levels,
    load_trace,
    merge_leveled_runs,
    save_trace,
    top_k_layers,
)

__version__ = "0.1.0"
