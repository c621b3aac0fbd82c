"""Named, independent random substreams per replication.

Each stream is seeded from ``(master seed, replication, stream name, index)``
so that, e.g., the arrival stream of type 2 in replication 7 is the same no
matter which policy is being simulated or how much of any other stream was
consumed.
"""

from __future__ import annotations

import numpy as np

STREAMS = {
    "arrivals": 0,      # per customer type
    "routing": 1,       # per customer type
    "payoffs": 2,       # per customer type
    "services": 3,      # per server
    "reallocation": 4,
    "decisions": 5,     # allocation-policy choices
    "tiebreak": 6,      # learner argmax ties
}


class RngStreams:
    def __init__(self, seed: int, replication: int = 0):
        if seed < 0 or replication < 0:
            raise ValueError("seed and replication must be nonnegative")
        self.seed = int(seed)
        self.replication = int(replication)
        self._cache: dict[tuple[str, int], np.random.Generator] = {}

    def stream(self, name: str, index: int = 0) -> np.random.Generator:
        key = (name, int(index))
        gen = self._cache.get(key)
        if gen is None:
            ss = np.random.SeedSequence(self.seed,
                                        spawn_key=(self.replication, STREAMS[name], int(index)))
            gen = self._cache[key] = np.random.Generator(np.random.PCG64(ss))
        return gen
