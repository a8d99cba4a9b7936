"""Counter-based random streams keyed by (seed, purpose, index)."""

from __future__ import annotations

import os

import numpy as np

# stream purposes; part of the key so different consumers never overlap
PIVOTAL = 1
DESIGN = 2
NOISE = 3

THREADS_ENV = "L1QR_THREADS"


def stream(seed: int, purpose: int, index: int) -> np.random.Generator:
    """Philox generator whose stream depends only on its key."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, int(purpose), int(index)])
    return np.random.Generator(np.random.Philox(ss))


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1
