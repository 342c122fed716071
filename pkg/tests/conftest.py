"""Shared builders for session-level tests."""

import pytest

from fvsim.session import SyncBuffer
from fvsim.streams import (
    CONSTANT,
    SWITCHING,
    ChunkBudgets,
    StreamConfig,
    generate_multiview_streams,
)


def make_world(n_views=6, chunks=3, c_bits=100_000, s_bits=60_000, **cfg_kwargs):
    """A StreamConfig, a filled SyncBuffer, and the underlying chunk pool."""
    cfg = StreamConfig(n_views=n_views, **cfg_kwargs)
    budgets = [
        ChunkBudgets(j, (c_bits,) * n_views, (s_bits,) * n_views)
        for j in range(chunks)
    ]
    pool = generate_multiview_streams(cfg, budgets)
    buffer = SyncBuffer(n_views)
    for key in sorted(pool):
        for frame in pool[key].frames:
            buffer.push_frame(frame)
    return cfg, buffer, pool


@pytest.fixture
def world():
    return make_world()
