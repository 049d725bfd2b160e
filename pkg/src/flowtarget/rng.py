"""Seeded, named random streams.

All randomness in the package flows through counter-based Philox generators
keyed by ``(seed, stream name, index)``, so instance generation, arrival
sampling, estimator restarts, and experiment replications draw from disjoint,
individually replayable streams.
"""

from __future__ import annotations

import numpy as np

STREAMS = {
    "instance": 0,
    "arrivals": 1,
    "restarts": 2,
    "experiment": 3,
}


def rng_stream(seed: int, stream: str, index: int = 0) -> np.random.Generator:
    """Generator for the given named stream and replication index."""
    try:
        code = STREAMS[stream]
    except KeyError:
        raise ValueError(f"unknown stream {stream!r}; expected one of {sorted(STREAMS)}") from None
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=(code, int(index)))
    return np.random.Generator(np.random.Philox(seq))
