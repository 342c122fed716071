"""Edge-side per-user frame reassembly.

A session stitches one decodable output stream per user out of the shared
multiview frame pool, switching views without re-encoding anything.  Modes:

* ``constant``  - emitting the C representation of one view.
* ``sweeping``  - moving one view per frame toward a target, emitting only
  I-frames from S representations.  If the next view has no I at the next
  pts the session dwells one frame on the current view's S I-frame (the
  staggered layouts guarantee one of the two exists at every pts).
* ``resync``    - arrived at the target; emitting S frames of that view until
  the next chunk boundary, where the C representation restarts with an I.
* ``joining``   - transient before the first emission; enters via an S
  I-frame (or directly via C at a chunk boundary) within one frame.

The buffer is single-writer per frame push and sessions only read from it;
sessions never share mutable state with each other, so distinct sessions may
be advanced concurrently as long as pushes are not interleaved with reads.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

from .errors import (
    ConfigError,
    DecodabilityViolation,
    DuplicateFrame,
    IncompleteLog,
    InvalidView,
    OutOfOrderFrame,
    StarvedBuffer,
)
from .streams import CONSTANT, I_FRAME, P_FRAME, SWITCHING, Frame, StreamConfig

JOINING = "joining"
CONSTANT_MODE = "constant"
SWEEPING = "sweeping"
RESYNC = "resync"


@dataclass(frozen=True, slots=True)
class SwitchEvent:
    user_id: int
    request_pts: int
    target_view: int


class SyncBuffer:
    """PTS-indexed frame store for all 2 * n_views representations.

    The watermark is the highest pts p such that every representation queue
    holds a contiguous run of frames from its base up to p; sessions may only
    read at or below it.  Frames may arrive in any order at or above the
    pruned base; duplicates and pushes below the base are rejected.
    """

    def __init__(self, n_views: int, base_pts: int = 0):
        if n_views < 1:
            raise ConfigError("n_views must be >= 1")
        self.n_views = n_views
        self._base = base_pts
        self._frames: dict[tuple[int, str], dict[int, Frame]] = {}
        self._contig: dict[tuple[int, str], int] = {}
        for v in range(1, n_views + 1):
            for rep in (CONSTANT, SWITCHING):
                self._frames[(v, rep)] = {}
                self._contig[(v, rep)] = base_pts - 1
        self._watermark = base_pts - 1

    @property
    def watermark(self) -> int:
        return self._watermark

    def push_frame(self, frame: Frame) -> None:
        if not 1 <= frame.view <= self.n_views:
            raise InvalidView(f"view {frame.view} outside 1..{self.n_views}")
        key = (frame.view, frame.rep)
        if frame.pts < self._base:
            raise OutOfOrderFrame(
                f"pts {frame.pts} below pruned base {self._base} for {key}"
            )
        queue = self._frames[key]
        if frame.pts in queue:
            raise DuplicateFrame(f"duplicate frame {key} pts {frame.pts}")
        queue[frame.pts] = frame
        contig = self._contig[key]
        if frame.pts == contig + 1:
            while contig + 1 in queue:
                contig += 1
            self._contig[key] = contig
            self._watermark = min(self._contig.values())

    def get(self, view: int, rep: str, pts: int) -> Frame | None:
        return self._frames[(view, rep)].get(pts)

    def prune(self, before_pts: int) -> None:
        """Drop all frames below ``before_pts`` and raise the base."""
        if before_pts <= self._base:
            return
        for key, queue in self._frames.items():
            for pts in [p for p in queue if p < before_pts]:
                del queue[pts]
            self._contig[key] = max(self._contig[key], before_pts - 1)
        self._base = before_pts
        self._watermark = min(self._contig.values())


class Session:
    """State machine producing one user's output stream."""

    def __init__(self, user_id: int, join_pts: int, initial_view: int, cfg: StreamConfig):
        if not 1 <= initial_view <= cfg.n_views:
            raise InvalidView(f"view {initial_view} outside 1..{cfg.n_views}")
        if join_pts < 0:
            raise ConfigError("join_pts must be >= 0")
        # the advance-or-dwell sweep rule needs adjacent S layouts to cover
        # every pts between them, which the parity stagger gives only at
        # period 2
        if cfg.gop_switching != 2:
            raise ConfigError("sessions require gop_switching == 2")
        self.user_id = user_id
        self.join_pts = join_pts
        self.cfg = cfg
        self.mode = JOINING
        self.view = initial_view          # current view of whatever mode
        self.target: int | None = None    # sweep target
        self.direction = 0
        self.next_output_pts = join_pts
        self.emitted: list[Frame] = []
        self.frames_reassembled = 0
        self.frames_reencoded = 0         # reassembly never re-encodes

    @property
    def started(self) -> bool:
        return bool(self.emitted)

    def handle_event(self, event: SwitchEvent) -> None:
        """Apply a view-switch request; takes effect from the next emission."""
        m = event.target_view
        if not 1 <= m <= self.cfg.n_views:
            raise InvalidView(f"target view {m} outside 1..{self.cfg.n_views}")
        if m == self.view:
            return
        if self.mode == JOINING:
            self.view = m
            return
        self.target = m
        self.direction = 1 if m > self.view else -1
        self.mode = SWEEPING

    def next_output_frame(self, buffer: SyncBuffer) -> Frame | None:
        """Emit the frame for ``next_output_pts`` and advance the clock.

        Returns None only while joining, when the entry point has to wait one
        frame for an I.  Raises StarvedBuffer when the buffer has not yet
        received every stream up to this pts; the caller must retry later,
        no pts is ever skipped past.
        """
        pts = self.next_output_pts
        if buffer.watermark < pts:
            raise StarvedBuffer(
                f"user {self.user_id}: watermark {buffer.watermark} < pts {pts}"
            )
        F = self.cfg.frames_per_chunk
        frame: Frame | None

        if self.mode == JOINING:
            if pts % F == 0:
                frame = buffer.get(self.view, CONSTANT, pts)
                self.mode = CONSTANT_MODE
            else:
                candidate = buffer.get(self.view, SWITCHING, pts)
                if candidate is not None and candidate.kind == I_FRAME:
                    frame = candidate
                    self.mode = RESYNC
                else:
                    # no entry point at this pts; wait (at most one frame)
                    self.next_output_pts += 1
                    return None
        elif self.mode == CONSTANT_MODE:
            frame = buffer.get(self.view, CONSTANT, pts)
        elif self.mode == SWEEPING:
            nxt = self.view + self.direction
            candidate = buffer.get(nxt, SWITCHING, pts) if 1 <= nxt <= self.cfg.n_views else None
            if candidate is not None and candidate.kind == I_FRAME:
                frame = candidate
                self.view = nxt
                if self.view == self.target:
                    self.mode = RESYNC
                    self.target = None
                    self.direction = 0
            else:
                # phase misaligned: dwell one frame on the current view's S I
                # (adjacent staggered layouts cover every pts between them)
                frame = buffer.get(self.view, SWITCHING, pts)
                if frame is not None and frame.kind != I_FRAME:
                    raise AssertionError(
                        f"sweep coverage broken at pts {pts}, view {self.view}"
                    )
        elif self.mode == RESYNC:
            if pts % F == 0:
                frame = buffer.get(self.view, CONSTANT, pts)
                self.mode = CONSTANT_MODE
            else:
                frame = buffer.get(self.view, SWITCHING, pts)
        else:  # pragma: no cover - modes are closed
            raise AssertionError(f"unknown mode {self.mode}")

        if frame is None:
            raise StarvedBuffer(
                f"user {self.user_id}: frame missing at pts {pts} despite watermark"
            )
        self.emitted.append(frame)
        self.frames_reassembled += 1
        self.next_output_pts = pts + 1
        return frame


def validate_stream(frames: list[Frame]) -> tuple[bool, list[str]]:
    """Decodability oracle for an emitted stream.

    Checks that PTS values are consecutive and that every P-frame is
    immediately preceded by a frame of the same (view, rep) at pts - 1.
    """
    violations = []
    for idx, f in enumerate(frames):
        if idx > 0 and f.pts != frames[idx - 1].pts + 1:
            violations.append(
                f"pts gap: {frames[idx - 1].pts} -> {f.pts} at position {idx}"
            )
        if f.kind == P_FRAME:
            if idx == 0:
                violations.append(f"stream starts with P at pts {f.pts}")
            else:
                prev = frames[idx - 1]
                if prev.view != f.view or prev.rep != f.rep or prev.pts != f.pts - 1:
                    violations.append(
                        f"P at pts {f.pts} ({f.view},{f.rep}) not preceded by "
                        f"same-stream frame (got {prev.view},{prev.rep}@{prev.pts})"
                    )
    return (not violations, violations)


@dataclass(frozen=True)
class DelayReport:
    """Switch delays per event plus the startup delay, in frames and ms."""

    switch_delays: tuple[tuple[int, int, float], ...]  # (event_pts, frames, ms)
    startup_frames: int
    startup_ms: float


def measure_delays(
    emitted: list[Frame],
    events: list[SwitchEvent],
    join_pts: int,
    fps: int,
) -> DelayReport:
    """Measure per-event switch delay and the startup delay.

    Switch delay is the pts distance from the request to the first emitted
    frame showing a view different from the pre-switch view.  Events whose
    target equals the pre-switch view are no-ops and produce no entry.  An
    event with no emission after it raises IncompleteLog.
    """
    if not emitted:
        raise IncompleteLog("empty emission log")
    ms_per_frame = 1000.0 / fps
    pts_list = [f.pts for f in emitted]
    delays = []
    for ev in sorted(events, key=lambda e: e.request_pts):
        if ev.request_pts < pts_list[0]:
            continue  # pre-start switches are covered by the startup delay
        # last emitted frame at or before the request
        lo = _bisect_right(pts_list, ev.request_pts) - 1
        pre_view = emitted[lo].view
        if ev.target_view == pre_view:
            continue
        if lo + 1 >= len(emitted):
            raise IncompleteLog(
                f"event at pts {ev.request_pts} has no subsequent emission"
            )
        found = None
        for f in emitted[lo + 1 :]:
            if f.view != pre_view:
                found = f
                break
        if found is None:
            raise IncompleteLog(
                f"event at pts {ev.request_pts}: log ends before the view changes"
            )
        frames = found.pts - ev.request_pts
        delays.append((ev.request_pts, frames, frames * ms_per_frame))
    startup = emitted[0].pts - join_pts
    return DelayReport(
        switch_delays=tuple(delays),
        startup_frames=startup,
        startup_ms=startup * ms_per_frame,
    )


def _bisect_right(values: list[int], x: int) -> int:
    lo, hi = 0, len(values)
    while lo < hi:
        mid = (lo + hi) // 2
        if values[mid] <= x:
            lo = mid + 1
        else:
            hi = mid
    return lo


def per_user_bits(emitted: list[Frame], frames_per_chunk: int) -> dict[int, int]:
    """Total emitted bits per chunk index."""
    out: dict[int, int] = {}
    for f in emitted:
        j = f.pts // frames_per_chunk
        out[j] = out.get(j, 0) + f.size_bits
    return out


def write_emitted_csv(sessions: list[Session], path) -> None:
    """Emitted-frame log: user_id,pts,view,rep,kind,size_bits."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["user_id", "pts", "view", "rep", "kind", "size_bits"])
        for s in sessions:
            for f in s.emitted:
                writer.writerow([s.user_id, f.pts, f.view, f.rep, f.kind, f.size_bits])


def write_delay_csv(rows: list[tuple[int, int, float]], path) -> None:
    """Switch-delay log: user_id,event_pts,switch_delay_ms."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["user_id", "event_pts", "switch_delay_ms"])
        for user_id, event_pts, delay_ms in rows:
            writer.writerow([user_id, event_pts, f"{delay_ms:.3f}"])
