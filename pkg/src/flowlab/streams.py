"""Reproducible random streams.

Every random draw in the package is addressed by ``(seed, stream_id)``, never
by execution order, so batches and sweep cells can run in any order (or
concurrently) and still produce identical results.  Streams are built on the
Philox 4x64 counter-based generator (10 rounds, numpy's ``Philox``) keyed by
the pair ``(seed, stream_id)``; each seed therefore owns 2**64 independent
substreams.  The generator identity is part of the external contract and is
pinned in config file headers as ``rng: philox4x64-10``.

Stream id layout:

* ``0 .. 2**60 - 1``        one stream per trajectory (noise draw, then the
                            class-condition draw, in that order)
* ``REFERENCE_BASE + tag``  reference draws from the target mixture
* ``TRAIN_BASE + tag``      training batches for the velocity network
"""

from __future__ import annotations

import numpy as np

RNG_ALGORITHM = "philox4x64-10"

REFERENCE_BASE = 1 << 62
TRAIN_BASE = 1 << 61


def substream(seed: int, stream_id: int) -> np.random.Generator:
    """Return the generator for one ``(seed, stream_id)`` address."""
    if seed < 0 or stream_id < 0:
        raise ValueError("seed and stream_id must be non-negative")
    key = np.array([seed, stream_id], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def trajectory_stream(seed: int, index: int) -> np.random.Generator:
    """Stream owning all randomness of trajectory ``index``."""
    return substream(seed, index)


def reference_stream(seed: int, tag: int = 0) -> np.random.Generator:
    """Stream for an independent reference draw from the target."""
    return substream(seed, REFERENCE_BASE + tag)


def training_stream(seed: int, tag: int = 0) -> np.random.Generator:
    """Stream feeding the velocity-network training loop."""
    return substream(seed, TRAIN_BASE + tag)
