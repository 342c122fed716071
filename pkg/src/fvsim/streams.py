"""Dual-representation multiview stream modeling.

Every camera view is carried twice: a view-constant representation "C" with a
long GoP (cheap to watch, expensive to join mid-GoP) and a view-switching
representation "S" with a short GoP whose I-frame positions are staggered by
view parity so that a sweep across adjacent views always finds an I-frame
within one frame interval.

All functions here are pure and deterministic; chunk generation is safe to
call from multiple threads.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .errors import BudgetTooSmall, ConfigError, IncompleteAllocation, InvalidView

CONSTANT = "C"
SWITCHING = "S"
REPRESENTATIONS = (CONSTANT, SWITCHING)

I_FRAME = "I"
P_FRAME = "P"


@dataclass(frozen=True)
class StreamConfig:
    """Static description of the multiview source.

    ``gop_constant`` is the I-frame period of the C representation and
    ``gop_switching`` the period of the S representation.  ``i_to_p_ratio``
    is the size ratio k between an I-frame and a P-frame of the same chunk.
    """

    n_views: int
    fps: int = 25
    chunk_seconds: float = 1.0
    gop_constant: int = 25
    gop_switching: int = 2
    i_to_p_ratio: float = 4.0

    def __post_init__(self):
        if self.n_views < 1:
            raise ConfigError(f"n_views must be >= 1, got {self.n_views}")
        if self.fps < 1:
            raise ConfigError(f"fps must be >= 1, got {self.fps}")
        if self.chunk_seconds <= 0:
            raise ConfigError("chunk_seconds must be positive")
        frames = self.fps * self.chunk_seconds
        if abs(frames - round(frames)) > 1e-9 or round(frames) < 1:
            raise ConfigError(
                f"fps * chunk_seconds must be a positive integer, got {frames}"
            )
        if self.gop_constant < 1:
            raise ConfigError("gop_constant must be >= 1")
        # parity staggering needs an even switching period
        if self.gop_switching < 2 or self.gop_switching % 2 != 0:
            raise ConfigError(
                f"gop_switching must be an even integer >= 2, got {self.gop_switching}"
            )
        if self.i_to_p_ratio <= 1.0:
            raise ConfigError("i_to_p_ratio must be > 1")

    @property
    def frames_per_chunk(self) -> int:
        return round(self.fps * self.chunk_seconds)


@dataclass(frozen=True, slots=True)
class Frame:
    """One coded frame. ``pts`` is global: chunk_index * frames_per_chunk + t."""

    view: int
    rep: str
    chunk: int
    pts: int
    kind: str
    size_bits: int

    def __post_init__(self):
        if self.kind not in (I_FRAME, P_FRAME):
            raise ConfigError(f"frame kind must be I or P, got {self.kind!r}")
        if self.size_bits < 0:
            raise ConfigError("size_bits must be >= 0")


@dataclass(frozen=True)
class RepresentationChunk:
    """All frames of one (view, representation) for one chunk, in PTS order."""

    view: int
    rep: str
    chunk: int
    frames: tuple[Frame, ...]

    @property
    def total_bits(self) -> int:
        return sum(f.size_bits for f in self.frames)


def build_gop_layout(cfg: StreamConfig, view: int, rep: str) -> list[str]:
    """Return the I/P kind per intra-chunk position for one representation.

    C places an I wherever t is a multiple of gop_constant.  S staggers by
    view parity: odd views carry I at even positions, even views at odd
    positions, and even views additionally replace position 0 with an I so
    every chunk start is joinable.  The layout is identical for every chunk.
    """
    if not 1 <= view <= cfg.n_views:
        raise InvalidView(f"view {view} outside 1..{cfg.n_views}")
    if rep not in REPRESENTATIONS:
        raise ConfigError(f"rep must be one of {REPRESENTATIONS}, got {rep!r}")
    F = cfg.frames_per_chunk
    layout = []
    half = cfg.gop_switching // 2
    for t in range(F):
        if rep == CONSTANT:
            kind = I_FRAME if t % cfg.gop_constant == 0 else P_FRAME
        elif view % 2 == 1:
            kind = I_FRAME if t % cfg.gop_switching == 0 else P_FRAME
        else:
            kind = I_FRAME if (t == 0 or t % cfg.gop_switching == half) else P_FRAME
        layout.append(kind)
    return layout


def encode_chunk(
    cfg: StreamConfig,
    view: int,
    rep: str,
    chunk: int,
    budget_bits: int,
    layout: Sequence[str] | None = None,
) -> RepresentationChunk:
    """Assign integer frame sizes for one chunk so they sum exactly to budget.

    With n_I I-frames and n_P P-frames and ratio k:
    size_P = floor(budget / (k*n_I + n_P)), size_I = floor(k * size_P), and
    the leftover bits go to the first I-frame.
    """
    if layout is None:
        layout = build_gop_layout(cfg, view, rep)
    n_i = sum(1 for kind in layout if kind == I_FRAME)
    n_p = len(layout) - n_i
    k = cfg.i_to_p_ratio
    # smallest budget for which every frame still gets >= 1 bit
    min_budget = k * n_i + n_p
    if budget_bits < min_budget:
        raise BudgetTooSmall(
            f"budget {budget_bits} below minimum {min_budget:.0f} "
            f"for layout with {n_i} I and {n_p} P frames at ratio {k}"
        )
    size_p = int(budget_bits // (k * n_i + n_p))
    size_i = int(k * size_p)
    remainder = budget_bits - (n_i * size_i + n_p * size_p)
    F = cfg.frames_per_chunk
    frames = []
    first_i_seen = False
    for t, kind in enumerate(layout):
        size = size_i if kind == I_FRAME else size_p
        if kind == I_FRAME and not first_i_seen:
            size += remainder
            first_i_seen = True
        frames.append(
            Frame(
                view=view,
                rep=rep,
                chunk=chunk,
                pts=chunk * F + t,
                kind=kind,
                size_bits=size,
            )
        )
    return RepresentationChunk(view=view, rep=rep, chunk=chunk, frames=tuple(frames))


@dataclass(frozen=True)
class ChunkBudgets:
    """Per-chunk bit budgets for every representation, in bits."""

    chunk: int
    constant_bits: tuple[int, ...]
    switching_bits: tuple[int, ...]


def generate_multiview_streams(
    cfg: StreamConfig, budgets: Sequence[ChunkBudgets]
) -> dict[tuple[int, str, int], RepresentationChunk]:
    """Encode every (view, rep, chunk) combination covered by ``budgets``.

    Budgets must cover chunks 0..len-1 in order, each with exactly n_views
    entries per representation; anything else raises IncompleteAllocation.
    """
    out: dict[tuple[int, str, int], RepresentationChunk] = {}
    layouts = {
        (v, rep): build_gop_layout(cfg, v, rep)
        for v in range(1, cfg.n_views + 1)
        for rep in REPRESENTATIONS
    }
    for j, cb in enumerate(budgets):
        if cb.chunk != j:
            raise IncompleteAllocation(f"expected budgets for chunk {j}, got {cb.chunk}")
        if len(cb.constant_bits) != cfg.n_views or len(cb.switching_bits) != cfg.n_views:
            raise IncompleteAllocation(
                f"chunk {j}: need {cfg.n_views} budgets per representation"
            )
        for v in range(1, cfg.n_views + 1):
            out[(v, CONSTANT, j)] = encode_chunk(
                cfg, v, CONSTANT, j, cb.constant_bits[v - 1], layouts[(v, CONSTANT)]
            )
            out[(v, SWITCHING, j)] = encode_chunk(
                cfg, v, SWITCHING, j, cb.switching_bits[v - 1], layouts[(v, SWITCHING)]
            )
    return out


def write_stream_csv(
    chunks: Mapping[tuple[int, str, int], RepresentationChunk] | Iterable[RepresentationChunk],
    path,
) -> None:
    """Dump frames as CSV with columns view,rep,chunk,pts,kind,size_bits."""
    if isinstance(chunks, Mapping):
        items = [chunks[key] for key in sorted(chunks)]
    else:
        items = sorted(chunks, key=lambda c: (c.view, c.rep, c.chunk))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["view", "rep", "chunk", "pts", "kind", "size_bits"])
        for rc in items:
            for f in rc.frames:
                writer.writerow([f.view, f.rep, f.chunk, f.pts, f.kind, f.size_bits])
