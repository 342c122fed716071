"""Closed-loop experiment driver.

Per chunk j the loop: measure actual popularity from chunk j-1, predict,
allocate the chunk budget, encode the 2N representation chunks, advance every
session frame by frame (delivering switch events after the frame at their
request pts), then record QoE, precision, and bandwidth.  Nothing in the loop
reads data from a later chunk, so allocations depend only on what an edge
server could have observed.

Budgets move through two unit systems: the allocator works in abstract rate
units, streams in integer bits; ``bits_per_unit`` converts between them.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

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
from .errors import ConfigError, DecodabilityViolation, IncompleteLog
from .gnn import TrainConfig
from .popularity import (
    PopularityObservation,
    PopularityPrediction,
    PopularitySeries,
    compute_actual_popularity,
    make_predictor,
    precision_score,
)
from .session import Session, SyncBuffer, measure_delays, validate_stream
from .streams import (
    CONSTANT,
    I_FRAME,
    REPRESENTATIONS,
    SWITCHING,
    ChunkBudgets,
    StreamConfig,
    build_gop_layout,
    encode_chunk,
)
from .traces import BehaviorModel, ViewTrace, gen_traces, low_interactivity

ALLOCATION_SCHEMES = ("adaptive", "uniform", "ppc-only", "gnn-only")
BANDWIDTH_SCHEMES = ("reassembly", "has10", "conventional")
HAS_WINDOW = 10


@dataclass(frozen=True)
class ExperimentConfig:
    stream: StreamConfig
    users: int = 50
    chunks: int = 60
    scheme: str = "adaptive"
    seed: int = 0
    behavior: BehaviorModel = field(default_factory=low_interactivity)
    qoe: QoeParams = field(default_factory=QoeParams)
    train: TrainConfig = field(default_factory=TrainConfig)
    bounds: RateBounds | None = None  # None: derived from the fair share
    r_tar: float | None = None        # units/second; None: 10 per view
    sw: int = 4
    bits_per_unit: int = 1000
    initial_history: int = 10

    def __post_init__(self):
        if self.scheme not in ALLOCATION_SCHEMES:
            raise ConfigError(f"scheme must be one of {ALLOCATION_SCHEMES}")
        if self.users < 1:
            raise ConfigError("users must be >= 1")
        if self.chunks < 0:
            raise ConfigError("chunks must be >= 0")
        if self.bits_per_unit < 1:
            raise ConfigError("bits_per_unit must be >= 1")
        if self.sw < 1 or self.initial_history < 1:
            raise ConfigError("sw and initial_history must be >= 1")

    @property
    def effective_r_tar(self) -> float:
        return self.r_tar if self.r_tar is not None else 10.0 * self.stream.n_views


@dataclass
class RunResult:
    """Everything a report or a test needs from one closed-loop run."""

    config: ExperimentConfig
    traces: list[ViewTrace]
    budgets: list[float]                       # per-chunk targets, units
    budget_floored: list[bool]
    allocations: list[Allocation]
    qoe: list[float]
    precision: list[float]
    observations: list[PopularityObservation]
    predictions: list[PopularityPrediction]
    bandwidth: list[tuple[int, int, int, int, int]]  # chunk,user,own,has10,conv
    delays: list[tuple[int, int, int, float]]        # user,event_pts,frames,ms
    startups: list[tuple[int, int, float]]           # user,frames,ms
    frames_reassembled: int
    frames_reencoded: int
    emitted_frames: int
    reassembly_seconds: float
    wall_seconds: float
    sessions: list[Session]


def _layout_min_bits(cfg: StreamConfig) -> dict[str, float]:
    """Smallest encodable chunk budget per representation, in bits."""
    out = {CONSTANT: 0.0, SWITCHING: 0.0}
    for rep in REPRESENTATIONS:
        worst = 0.0
        for view in (1, min(2, cfg.n_views)):
            layout = build_gop_layout(cfg, view, rep)
            n_i = sum(1 for k in layout if k == I_FRAME)
            worst = max(worst, cfg.i_to_p_ratio * n_i + (len(layout) - n_i))
        out[rep] = worst
    return out


def _check_bounds_encodable(cfg: StreamConfig, bounds: RateBounds, bpu: int) -> None:
    mins = _layout_min_bits(cfg)
    if bounds.r_min * bpu < mins[CONSTANT] or bounds.rhat_min * bpu < mins[SWITCHING]:
        raise ConfigError(
            f"rate bounds too small to encode a chunk: need >= "
            f"{mins[CONSTANT]:.0f} / {mins[SWITCHING]:.0f} bits per representation, "
            f"got {bounds.r_min * bpu:.0f} / {bounds.rhat_min * bpu:.0f}"
        )


def has_window_views(view: int, n_views: int, width: int = HAS_WINDOW) -> range:
    """The ``width`` views nearest ``view``, shifted to stay inside 1..N."""
    width = min(width, n_views)
    start = min(max(view - 1 - (width - 1) // 2, 0), n_views - width)
    return range(start + 1, start + width + 1)


def baseline_bandwidth(
    scheme: str,
    budgets: list[ChunkBudgets],
    sessions: list[Session],
    frames_per_chunk: int,
) -> dict[tuple[int, int], int]:
    """Per-(user, chunk) delivered bits under a delivery scheme.

    ``reassembly`` counts the bits a session actually emitted; ``has10`` the
    constant-representation budgets of the HAS_WINDOW views nearest the view
    the user showed at the chunk start; ``conventional`` every view's
    constant budget.  Users appear only for chunks where they emitted frames.
    """
    if scheme not in BANDWIDTH_SCHEMES:
        raise ConfigError(f"scheme must be one of {BANDWIDTH_SCHEMES}")
    by_chunk = {cb.chunk: cb for cb in budgets}
    out: dict[tuple[int, int], int] = {}
    for s in sessions:
        for f in s.emitted:
            j = f.pts // frames_per_chunk
            key = (s.user_id, j)
            if scheme == "reassembly":
                out[key] = out.get(key, 0) + f.size_bits
            elif key not in out:
                cb = by_chunk[j]
                n = len(cb.constant_bits)
                if scheme == "conventional":
                    out[key] = sum(cb.constant_bits)
                else:
                    out[key] = sum(
                        cb.constant_bits[v - 1] for v in has_window_views(f.view, n)
                    )
    return out


def run_experiment(
    config: ExperimentConfig, traces: list[ViewTrace] | None = None
) -> RunResult:
    """Drive the full closed loop and return every recorded series.

    A decodability violation in any emitted stream raises
    DecodabilityViolation with the offending sessions attached for dumping.
    """
    t_start = time.perf_counter()
    cfg = config.stream
    n, F = cfg.n_views, cfg.frames_per_chunk
    end_pts = config.chunks * F
    if traces is None:
        if config.chunks == 0:
            traces = []
        else:
            traces = gen_traces(
                config.behavior, config.users, config.chunks, n, F, seed=config.seed
            )
    schedule = BudgetSchedule(
        r_tar=config.effective_r_tar, chunk_seconds=cfg.chunk_seconds, sw=config.sw
    )
    bounds = config.bounds or RateBounds.default_for(schedule.r_avg, n)
    bpu = config.bits_per_unit
    _check_bounds_encodable(cfg, bounds, bpu)

    predictor = make_predictor(
        config.scheme, n, config.train, initial_history=config.initial_history
    )
    series = PopularitySeries(n)
    buffer = SyncBuffer(n)
    sessions = {
        tr.user_id: Session(tr.user_id, tr.join_pts, tr.initial_view, cfg)
        for tr in traces
        if tr.join_pts < end_pts
    }
    user_order = sorted(sessions)
    events_at: dict[int, list] = {}
    for tr in traces:
        for ev in tr.events:
            if ev.request_pts < end_pts:
                events_at.setdefault(ev.request_pts, []).append(ev)
    layouts = {
        (v, rep): build_gop_layout(cfg, v, rep)
        for v in range(1, n + 1)
        for rep in REPRESENTATIONS
    }

    budgets_series: list[float] = []
    floored_series: list[bool] = []
    allocations: list[Allocation] = []
    qoe_series: list[float] = []
    precision_series: list[float] = []
    observations: list[PopularityObservation] = []
    predictions: list[PopularityPrediction] = []
    bandwidth_rows: list[tuple[int, int, int, int, int]] = []
    chunk_budget_bits: list[ChunkBudgets] = []
    prev_constant = np.full(n, schedule.r_avg / (2 * n))
    reassembly_seconds = 0.0

    for j in range(config.chunks):
        buffer.prune(j * F)
        budget, floored = target_bits(schedule, bounds, n)
        pred = predictor.predict(series)
        if config.scheme == "uniform":
            alloc = uniform_allocate(j, budget, n, bounds)
        else:
            alloc = allocate(
                j, budget, pred.p, pred.p_hat, prev_constant, config.qoe, bounds
            )
        cb = ChunkBudgets(
            chunk=j,
            constant_bits=tuple(int(round(r * bpu)) for r in alloc.constant),
            switching_bits=tuple(int(round(r * bpu)) for r in alloc.switching),
        )
        chunk_budget_bits.append(cb)
        for v in range(1, n + 1):
            for rep, bits in ((CONSTANT, cb.constant_bits[v - 1]),
                              (SWITCHING, cb.switching_bits[v - 1])):
                rc = encode_chunk(cfg, v, rep, j, bits, layouts[(v, rep)])
                for frame in rc.frames:
                    buffer.push_frame(frame)

        emitted_before = {uid: len(sessions[uid].emitted) for uid in user_order}
        t0 = time.perf_counter()
        for t in range(F):
            pts = j * F + t
            for uid in user_order:
                s = sessions[uid]
                if s.next_output_pts == pts and pts >= s.join_pts:
                    s.next_output_frame(buffer)
            for ev in events_at.get(pts, ()):
                sessions[ev.user_id].handle_event(ev)
        reassembly_seconds += time.perf_counter() - t0

        chunk_slices = {
            uid: sessions[uid].emitted[emitted_before[uid]:] for uid in user_order
        }
        obs = compute_actual_popularity(
            [sl for sl in chunk_slices.values() if sl], j, n, F
        )
        prec = precision_score(pred.p, pred.p_hat, obs.x, obs.x_hat)
        # first chunk has no predecessor; score it with a zero temporal term
        qoe_prev = alloc.constant if j == 0 else allocations[-1].constant
        q = qoe_total(alloc.constant, alloc.switching, qoe_prev, obs.x, obs.x_hat, config.qoe)

        for uid in user_order:
            sl = chunk_slices[uid]
            if not sl:
                continue
            own = sum(f.size_bits for f in sl)
            window = has_window_views(sl[0].view, n)
            has10 = sum(cb.constant_bits[v - 1] for v in window)
            bandwidth_rows.append((j, uid, own, has10, sum(cb.constant_bits)))

        budgets_series.append(budget)
        floored_series.append(floored)
        allocations.append(alloc)
        observations.append(obs)
        predictions.append(pred)
        precision_series.append(prec)
        qoe_series.append(q)
        series.append(obs)
        predictor.observe(series)
        schedule.record(alloc.total)
        prev_constant = alloc.constant

    violations = []
    for uid in user_order:
        ok, v = validate_stream(sessions[uid].emitted)
        if not ok:
            violations.extend(f"user {uid}: {msg}" for msg in v)
    if violations:
        err = DecodabilityViolation(
            f"{len(violations)} decodability violations", violations=violations
        )
        err.sessions = list(sessions.values())
        raise err

    delays: list[tuple[int, int, int, float]] = []
    startups: list[tuple[int, int, float]] = []
    traces_by_uid = {tr.user_id: tr for tr in traces}
    for uid in user_order:
        s = sessions[uid]
        if not s.emitted:
            continue
        # a switch requested too close to the end cannot finish inside the
        # log; it is delivered to the session but not measured
        measurable = [
            e for e in traces_by_uid[uid].events if e.request_pts < end_pts - 2
        ]
        rep = measure_delays(s.emitted, measurable, s.join_pts, cfg.fps)
        delays.extend((uid, p, fr, ms) for p, fr, ms in rep.switch_delays)
        startups.append((uid, rep.startup_frames, rep.startup_ms))

    return RunResult(
        config=config,
        traces=traces,
        budgets=budgets_series,
        budget_floored=floored_series,
        allocations=allocations,
        qoe=qoe_series,
        precision=precision_series,
        observations=observations,
        predictions=predictions,
        bandwidth=bandwidth_rows,
        delays=delays,
        startups=startups,
        frames_reassembled=sum(s.frames_reassembled for s in sessions.values()),
        frames_reencoded=sum(s.frames_reencoded for s in sessions.values()),
        emitted_frames=sum(len(s.emitted) for s in sessions.values()),
        reassembly_seconds=reassembly_seconds,
        wall_seconds=time.perf_counter() - t_start,
        sessions=[sessions[uid] for uid in user_order],
    )
