"""Counter-based random streams.

Every shot owns a Philox stream keyed by its seed, and shot seeds are
derived from ``(base_seed, shot_index)`` so results never depend on how
shots are scheduled across workers.
"""

from __future__ import annotations

import numpy as np


def shot_seed(base_seed: int, index: int) -> int:
    words = np.random.SeedSequence([int(base_seed) & 0xFFFFFFFFFFFFFFFF, int(index)]).generate_state(2, np.uint64)
    return int(words[0]) << 64 | int(words[1])


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=int(seed) & ((1 << 128) - 1)))
