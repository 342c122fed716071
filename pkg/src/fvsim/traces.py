"""Synthetic user behavior and trace file I/O.

A trace is one user's join point plus a sequence of view-switch requests.
Behavior is a Markov dwell/switch process: exponential dwell times (in
frames, so request phases land uniformly within chunks), then a jump whose
length follows the model's sweep-length distribution, biased toward the
user's preferred view.  Preferred views follow a Zipf law in the distance
from a seeded hot view, which skews the popularity distribution while
keeping it spatially smooth: neighboring cameras draw similar audiences,
the way an attractive region of a rig does.

Trace CSV schema (one row per event, join rows have empty request/target):

    user_id,join_pts,request_pts,target_view

An event at request_pts == join_pts names the user's initial view; users
without one start at view 1.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InvalidView, ParseError
from .session import SwitchEvent


@dataclass(frozen=True)
class BehaviorModel:
    kind: str = "low"
    dwell_mean_chunks: float = 15.0
    sweep_views_mean: float = 1.5
    view_skew: float = 1.1       # Zipf exponent over view preference, 0 = uniform
    home_bias: float = 0.7       # probability a jump heads toward the home view
    burst_every_chunks: int = 0  # 0 disables synchronized switch bursts
    burst_chunks: int = 0
    burst_dwell_chunks: float = 0.2

    def __post_init__(self):
        if self.kind not in ("low", "high"):
            raise ConfigError(f"behavior kind must be low or high, got {self.kind!r}")
        if self.dwell_mean_chunks <= 0 or self.sweep_views_mean < 1:
            raise ConfigError("dwell_mean_chunks > 0 and sweep_views_mean >= 1 required")
        if not 0 <= self.home_bias <= 1:
            raise ConfigError("home_bias must be in [0, 1]")
        if self.burst_every_chunks < 0 or self.burst_chunks < 0:
            raise ConfigError("burst windows must be >= 0")


def low_interactivity(**overrides) -> BehaviorModel:
    """Long dwells, short occasional jumps (switch rate well under 0.1/chunk)."""
    defaults = dict(kind="low", dwell_mean_chunks=15.0, sweep_views_mean=1.5)
    defaults.update(overrides)
    return BehaviorModel(**defaults)


def high_interactivity(**overrides) -> BehaviorModel:
    """Short dwells, multi-view sweeps (switch rate above 0.5/chunk)."""
    defaults = dict(kind="high", dwell_mean_chunks=1.2, sweep_views_mean=5.0)
    defaults.update(overrides)
    return BehaviorModel(**defaults)


@dataclass(frozen=True)
class ViewTrace:
    user_id: int
    join_pts: int
    initial_view: int
    events: tuple[SwitchEvent, ...]  # strictly increasing request_pts


def _preference_weights(n_views: int, skew: float, seed: int) -> np.ndarray:
    """Zipf weights ranked by distance from a seeded hot view."""
    if skew <= 0:
        return np.full(n_views, 1.0 / n_views)
    hot = int(np.random.default_rng(seed).integers(0, n_views))
    ranks = np.abs(np.arange(n_views) - hot)
    w = 1.0 / (ranks + 1.0) ** skew
    return w / w.sum()


def _gen_user(
    model: BehaviorModel,
    uid: int,
    weights: np.ndarray,
    n_views: int,
    end_pts: int,
    frames_per_chunk: int,
    seed: int,
) -> ViewTrace:
    rng = np.random.default_rng([seed, uid])
    home = int(rng.choice(n_views, p=weights)) + 1
    initial = home
    join_pts = int(rng.integers(0, frames_per_chunk))
    events = [SwitchEvent(user_id=uid, request_pts=join_pts, target_view=initial)]
    current = initial
    t = join_pts
    while True:
        chunk = t // frames_per_chunk
        in_burst = (
            model.burst_every_chunks > 0
            and chunk % model.burst_every_chunks < model.burst_chunks
        )
        dwell_chunks = model.burst_dwell_chunks if in_burst else model.dwell_mean_chunks
        t += max(1, round(rng.exponential(dwell_chunks * frames_per_chunk)))
        # leave room for the switch to complete before the run ends
        if t >= end_pts - 2:
            break
        length = max(1, int(rng.geometric(1.0 / model.sweep_views_mean)))
        if current == home or rng.random() >= model.home_bias:
            direction = 1 if rng.random() < 0.5 else -1
        else:
            direction = 1 if home > current else -1
        target = min(max(current + direction * length, 1), n_views)
        if target == current:
            target = min(max(current - direction, 1), n_views)
        if target == current:
            continue  # single-view rig
        events.append(SwitchEvent(user_id=uid, request_pts=t, target_view=target))
        current = target
    return ViewTrace(
        user_id=uid, join_pts=join_pts, initial_view=initial, events=tuple(events)
    )


def gen_traces(
    model: BehaviorModel,
    n_users: int,
    n_chunks: int,
    n_views: int,
    frames_per_chunk: int = 25,
    seed: int = 0,
) -> list[ViewTrace]:
    """Deterministic per-seed trace set; users draw independent substreams."""
    return gen_mixed_traces([model], n_users, n_chunks, n_views, frames_per_chunk, seed)


def gen_mixed_traces(
    models: list[BehaviorModel],
    n_users: int,
    n_chunks: int,
    n_views: int,
    frames_per_chunk: int = 25,
    seed: int = 0,
) -> list[ViewTrace]:
    """Like gen_traces with user uid following models[(uid - 1) % len(models)]."""
    if not models:
        raise ConfigError("need at least one behavior model")
    if n_users < 1 or n_chunks < 1 or n_views < 1:
        raise ConfigError("n_users, n_chunks, n_views must be >= 1")
    end_pts = n_chunks * frames_per_chunk
    weights = [_preference_weights(n_views, m.view_skew, seed) for m in models]
    return [
        _gen_user(
            models[(uid - 1) % len(models)],
            uid,
            weights[(uid - 1) % len(models)],
            n_views,
            end_pts,
            frames_per_chunk,
            seed,
        )
        for uid in range(1, n_users + 1)
    ]


def switch_rate(traces: list[ViewTrace], n_chunks: int) -> float:
    """Mean switch events per user per chunk (initial-view rows excluded)."""
    total = sum(
        sum(1 for e in tr.events if e.request_pts != tr.join_pts) for tr in traces
    )
    return total / (len(traces) * n_chunks)


def save_traces(traces: list[ViewTrace], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["user_id", "join_pts", "request_pts", "target_view"])
        for tr in traces:
            writer.writerow([tr.user_id, tr.join_pts, "", ""])
            for ev in tr.events:
                writer.writerow([tr.user_id, tr.join_pts, ev.request_pts, ev.target_view])


def load_traces(path, n_views: int) -> list[ViewTrace]:
    """Parse and validate a trace CSV (see the module docstring for schema)."""
    per_user: dict[int, dict] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["user_id", "join_pts", "request_pts", "target_view"]:
            raise ParseError(f"{path}: unexpected header {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row or not any(cell.strip() for cell in row):
                continue
            if len(row) != 4:
                raise ParseError(f"{path}:{lineno}: expected 4 columns, got {len(row)}")
            try:
                uid = int(row[0])
                join_pts = int(row[1])
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: bad user_id/join_pts") from exc
            if join_pts < 0:
                raise ParseError(f"{path}:{lineno}: join_pts must be >= 0")
            entry = per_user.setdefault(uid, {"join": join_pts, "events": []})
            if entry["join"] != join_pts:
                raise ParseError(f"{path}:{lineno}: inconsistent join_pts for user {uid}")
            if row[2].strip() == "" and row[3].strip() == "":
                continue  # join row
            try:
                request_pts = int(row[2])
                target = int(row[3])
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: bad request_pts/target_view") from exc
            if not 1 <= target <= n_views:
                raise InvalidView(
                    f"{path}:{lineno}: target view {target} outside 1..{n_views}"
                )
            if request_pts < join_pts:
                raise ParseError(f"{path}:{lineno}: event before join")
            entry["events"].append(
                SwitchEvent(user_id=uid, request_pts=request_pts, target_view=target)
            )
    traces = []
    for uid in sorted(per_user):
        entry = per_user[uid]
        events = entry["events"]
        for a, b in zip(events, events[1:]):
            if b.request_pts <= a.request_pts:
                raise ParseError(
                    f"{path}: user {uid} events not strictly increasing at pts {b.request_pts}"
                )
        initial = 1
        if events and events[0].request_pts == entry["join"]:
            initial = events[0].target_view
        traces.append(
            ViewTrace(
                user_id=uid, join_pts=entry["join"], initial_view=initial,
                events=tuple(events),
            )
        )
    return traces
