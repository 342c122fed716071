"""Trace-driven free-view video streaming simulator.

Dual-representation multiview stream modeling, edge-side frame reassembly
for re-encode-free view switching, graph-attention popularity forecasting,
and QoE-driven bit allocation, driven end to end by synthetic view traces.
"""

from .allocator import (
    Allocation,
    BudgetSchedule,
    QoeParams,
    RateBounds,
    allocate,
    qoe_total,
    target_bits,
    uniform_allocate,
)
from .errors import (
    BudgetTooSmall,
    ConfigError,
    DecodabilityViolation,
    DuplicateFrame,
    FvsimError,
    IncompleteAllocation,
    IncompleteLog,
    InsufficientHistory,
    InvalidView,
    NonFiniteValue,
    OutOfOrderFrame,
    ParseError,
    ShapeError,
    StarvedBuffer,
)
from .gnn import StGnn, TrainConfig
from .graph import ViewGraph, path_graph, read_adjacency_csv, write_adjacency_csv
from .harness import (
    ExperimentConfig,
    RunResult,
    baseline_bandwidth,
    run_experiment,
)
from .popularity import (
    PopularityObservation,
    PopularityPrediction,
    PopularitySeries,
    compute_actual_popularity,
    make_predictor,
    ppc_predict,
    precision_score,
)
from .reports import emit_report, load_summary, summarize
from .session import (
    Session,
    SwitchEvent,
    SyncBuffer,
    measure_delays,
    per_user_bits,
    validate_stream,
)
from .streams import (
    ChunkBudgets,
    Frame,
    RepresentationChunk,
    StreamConfig,
    build_gop_layout,
    encode_chunk,
    generate_multiview_streams,
)
from .traces import (
    BehaviorModel,
    ViewTrace,
    gen_mixed_traces,
    gen_traces,
    high_interactivity,
    load_traces,
    low_interactivity,
    save_traces,
)

__version__ = "0.1.0"
